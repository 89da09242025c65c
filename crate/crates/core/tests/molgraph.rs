mod common;

use common::{arb_molecule, corpus, permutation, CORPUS_MW, CORPUS_RINGS};
use mhg_core::hypergraph::molecule_code;
use mhg_core::molgraph::{
    featurize, parse_smiles, write_smiles, ATOM_FEATURE_CARDINALITIES, BOND_FEATURE_CARDINALITIES,
};
use proptest::prelude::*;

fn golden_rows(text: &str) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut sections = vec![Vec::new(), Vec::new()];
    let mut current = 0;
    let mut started = false;
    for line in text.lines() {
        if line.starts_with("# bonds") {
            current = 1;
        } else if line.starts_with('#') {
            started = true;
        } else if started && !line.trim().is_empty() {
            sections[current].push(
                line.split_whitespace()
                    .map(|t| t.parse().unwrap())
                    .collect(),
            );
        }
    }
    let bonds = sections.pop().unwrap();
    (sections.pop().unwrap(), bonds)
}

#[test]
fn ethanol_features_match_golden_table() {
    let (atoms, bonds) = golden_rows(include_str!("data/ethanol_features.txt"));
    let f = featurize(&parse_smiles("CCO").unwrap()).unwrap();
    let got_atoms: Vec<Vec<usize>> = f.atom_features.iter().map(|r| r.to_vec()).collect();
    let got_bonds: Vec<Vec<usize>> = f.bond_features.iter().map(|r| r.to_vec()).collect();
    assert_eq!(got_atoms, atoms);
    assert_eq!(got_bonds, bonds);
}

#[test]
fn toluene_counts() {
    // reference toolkit: 7 heavy atoms, 7 bonds, 1 ring, methyl has 3 H
    let m = parse_smiles("Cc1ccccc1").unwrap();
    assert_eq!((m.atom_count(), m.bond_count(), m.ring_count()), (7, 7, 1));
    assert_eq!(m.atoms()[0].explicit_h_count, 3);
    assert_eq!(m.atoms()[1].explicit_h_count, 0);
}

#[test]
fn corpus_molecular_weights_match_reference() {
    for line in CORPUS_MW.lines().filter(|l| !l.is_empty()) {
        let (smiles, mw) = line.split_once('\t').unwrap();
        let m = parse_smiles(smiles).unwrap();
        let expected: f64 = mw.parse().unwrap();
        assert!(
            (m.molecular_weight() - expected).abs() < 1e-2,
            "{smiles}: {} vs {expected}",
            m.molecular_weight()
        );
    }
}

#[test]
fn corpus_ring_counts_match_reference() {
    for line in CORPUS_RINGS.lines().filter(|l| !l.is_empty()) {
        let (smiles, rings) = line.split_once('\t').unwrap();
        assert_eq!(
            parse_smiles(smiles).unwrap().ring_count(),
            rings.parse::<usize>().unwrap(),
            "{smiles}"
        );
    }
}

#[test]
fn corpus_smiles_round_trip_is_isomorphic() {
    for m in corpus() {
        let text = write_smiles(&m);
        let back = parse_smiles(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert_eq!(molecule_code(&back), molecule_code(&m), "{text}");
    }
}

#[test]
fn written_smiles_is_order_independent_on_corpus() {
    for (i, m) in corpus().iter().enumerate() {
        let p = permutation(m.atom_count(), i as u64);
        assert_eq!(write_smiles(&m.permuted(&p)), write_smiles(m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn feature_indices_within_cardinality(m in arb_molecule()) {
        let f = featurize(&m).unwrap();
        for row in &f.atom_features {
            for (v, c) in row.iter().zip(ATOM_FEATURE_CARDINALITIES) {
                prop_assert!(*v < c);
            }
        }
        for row in &f.bond_features {
            for (v, c) in row.iter().zip(BOND_FEATURE_CARDINALITIES) {
                prop_assert!(*v < c);
            }
        }
    }

    #[test]
    fn featurize_is_permutation_equivariant(m in arb_molecule(), seed in any::<u64>()) {
        let p = permutation(m.atom_count(), seed);
        let f = featurize(&m).unwrap();
        let g = featurize(&m.permuted(&p)).unwrap();
        for (old, &new) in p.iter().enumerate() {
            prop_assert_eq!(f.atom_features[old], g.atom_features[new]);
        }
        prop_assert_eq!(&f.bond_features, &g.bond_features);
    }

    #[test]
    fn random_molecules_survive_smiles_round_trip(m in arb_molecule(), seed in any::<u64>()) {
        let text = write_smiles(&m);
        let back = parse_smiles(&text).unwrap();
        prop_assert_eq!(molecule_code(&back), molecule_code(&m));
        let p = permutation(m.atom_count(), seed);
        prop_assert_eq!(write_smiles(&m.permuted(&p)), text);
    }
}
