mod common;

use common::{arb_molecule, corpus, permutation};
use mhg_core::hypergraph::{canonical_form, to_hypergraph, to_molecule, Hypergraph};
use proptest::prelude::*;

/// Relabels hypernodes and hyperedges of `h`.
fn shuffled(h: &Hypergraph, seed: u64) -> Hypergraph {
    let node_perm = permutation(h.hypernodes.len(), seed);
    let edge_perm = permutation(h.hyperedges.len(), seed ^ 0x9e37);
    let mut out = Hypergraph::new();
    out.hypernodes = vec![
        h.hypernodes
            .first()
            .copied()
            .unwrap_or(mhg_core::molgraph::BondOrder::Single);
        h.hypernodes.len()
    ];
    for (old, &new) in node_perm.iter().enumerate() {
        out.hypernodes[new] = h.hypernodes[old];
    }
    let mut edges = vec![None; h.hyperedges.len()];
    for (old, &new) in edge_perm.iter().enumerate() {
        let mut e = h.hyperedges[old].clone();
        e.incidence = e.incidence.iter().map(|&v| node_perm[v]).collect();
        e.incidence.reverse();
        edges[new] = Some(e);
    }
    out.hyperedges = edges.into_iter().map(Option::unwrap).collect();
    out
}

#[test]
fn corpus_codes_are_distinct_and_round_trip() {
    let mols = corpus();
    let mut codes = std::collections::BTreeSet::new();
    for m in &mols {
        let h = to_hypergraph(m);
        h.validate(&[]).unwrap();
        let back = to_molecule(&h).unwrap();
        assert_eq!(canonical_form(&to_hypergraph(&back)), canonical_form(&h));
        codes.insert(canonical_form(&h));
    }
    assert_eq!(codes.len(), mols.len(), "corpus has no duplicate molecules");
}

#[test]
fn codes_are_stable_across_runs() {
    // frozen value; any change to labeling or encoding must update it on purpose
    let h = to_hypergraph(&mhg_core::molgraph::parse_smiles("CCO").unwrap());
    assert_eq!(
        canonical_form(&h).to_string(),
        "00000005000000050006000002000000050006000003000000050008000001000000030300000000000303000000000004000000000000000300000000000000000000000400000000000000010000000300000000000000020000000400000000"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hypernodes_always_join_two_hyperedges(m in arb_molecule()) {
        let h = to_hypergraph(&m);
        prop_assert!(h.degrees().iter().all(|&d| d == 2));
        prop_assert_eq!(canonical_form(&to_hypergraph(&to_molecule(&h).unwrap())), canonical_form(&h));
    }

    #[test]
    fn canonical_form_ignores_relabeling(m in arb_molecule(), seed in any::<u64>()) {
        let h = to_hypergraph(&m);
        prop_assert_eq!(canonical_form(&shuffled(&h, seed)), canonical_form(&h));
    }
}
