#![allow(dead_code)]

use mhg_core::molgraph::{parse_corpus, Atom, Bond, BondOrder, Element, Molecule};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

pub const CORPUS: &str = include_str!("../../data/corpus.smi");
pub const CORPUS_MW: &str = include_str!("../../data/corpus_mw.tsv");
pub const CORPUS_RINGS: &str = include_str!("../../data/corpus_rings.tsv");

pub fn corpus() -> Vec<Molecule> {
    parse_corpus(CORPUS)
        .unwrap()
        .into_iter()
        .map(|r| r.molecule)
        .collect()
}

pub fn corpus_smiles() -> Vec<String> {
    CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
    p
}

const ELEMENTS: [Element; 6] = [
    Element::C,
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::Cl,
];

/// Random connected molecules: a random tree plus a few ring-closing bonds,
/// with random attributes. Not necessarily chemically sensible.
pub fn arb_molecule() -> impl Strategy<Value = Molecule> {
    (1usize..14).prop_flat_map(|n| {
        (
            proptest::collection::vec((0usize..6, -1i8..=1, any::<bool>(), 0u8..4), n),
            proptest::collection::vec(
                (any::<proptest::sample::Index>(), 0u8..3),
                n.saturating_sub(1),
            ),
            proptest::collection::vec(
                (
                    any::<proptest::sample::Index>(),
                    any::<proptest::sample::Index>(),
                ),
                0..3,
            ),
        )
            .prop_map(move |(atom_specs, tree, extra)| {
                let atoms: Vec<Atom> = atom_specs
                    .iter()
                    .map(|&(e, charge, aromatic, h)| {
                        let mut a = Atom::new(ELEMENTS[e]);
                        a.formal_charge = charge;
                        a.aromatic = aromatic && a.element != Element::Cl;
                        a.explicit_h_count = h;
                        a
                    })
                    .collect();
                let order_for = |a: usize, b: usize, code: u8| {
                    if atoms[a].aromatic && atoms[b].aromatic {
                        BondOrder::Aromatic
                    } else {
                        [BondOrder::Single, BondOrder::Double, BondOrder::Triple][code as usize]
                    }
                };
                let mut bonds = Vec::new();
                let mut seen = std::collections::HashSet::new();
                for (i, (parent, code)) in tree.iter().enumerate() {
                    let child = i + 1;
                    let p = parent.index(child);
                    seen.insert((p, child));
                    bonds.push(Bond::new(p, child, order_for(p, child, *code)));
                }
                for (x, y) in extra {
                    let (a, b) = (x.index(n), y.index(n));
                    let key = (a.min(b), a.max(b));
                    if a != b && seen.insert(key) {
                        bonds.push(Bond::new(key.0, key.1, order_for(a, b, 0)));
                    }
                }
                Molecule::new(atoms, bonds).expect("generator builds valid graphs")
            })
    })
}
