//! Molecular graphs: atoms with chemical attributes joined by typed bonds.
//!
//! Hydrogens are implicit and stored as per-atom counts. A [`Molecule`] is
//! always connected and free of duplicate bonds; constructors reject
//! anything else.

mod corpus;
mod features;
mod smiles;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{parse_corpus, read_corpus, CorpusError, CorpusRecord};
pub use features::{
    featurize, FeatureError, FeatureVectors, ATOM_FEATURE_CARDINALITIES,
    BOND_FEATURE_CARDINALITIES, NUM_ATOM_FEATURES, NUM_BOND_FEATURES,
};
pub(crate) use smiles::canonical_atom_ranks;
pub use smiles::{parse_smiles, write_smiles, SmilesError};

/// The supported element alphabet (organic subset plus hydrogen).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol() == s)
    }

    /// Standard average atomic weight.
    pub fn mass(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::B => 10.812,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
            Element::P => 30.974,
            Element::S => 32.067,
            Element::Cl => 35.453,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Allowed valences in increasing order; the lowest one that fits is
    /// used when resolving implicit hydrogens.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::H => &[1],
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    /// Whether the element may be written as an aromatic lowercase atom.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Contribution to an atom's explicit valence (aromatic counts as 1;
    /// the aromatic correction is applied separately).
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        BondOrder::ALL.get(c as usize).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub aromatic: bool,
    pub explicit_h_count: u8,
    /// Derived from the bond graph on construction.
    pub in_ring: bool,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Self {
            element,
            formal_charge: 0,
            aromatic: false,
            explicit_h_count: 0,
            in_ring: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Self { a, b, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MolError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("bond {bond} references atom {atom}, but only {n_atoms} atoms exist")]
    BadEndpoint {
        bond: usize,
        atom: usize,
        n_atoms: usize,
    },
    #[error("bond {bond} joins atom {atom} to itself")]
    SelfLoop { bond: usize, atom: usize },
    #[error("atoms {a} and {b} are bonded more than once")]
    DuplicateBond { a: usize, b: usize },
    #[error("molecule is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("aromatic bond {bond} joins a non-aromatic atom")]
    AromaticMismatch { bond: usize },
}

/// A connected molecular graph with implicit hydrogens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    name: Option<String>,
    /// `adjacency[i]` lists `(neighbor, bond index)` sorted by bond index.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Molecule {
    /// Validates the graph and derives ring membership.
    pub fn new(mut atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, MolError> {
        if atoms.is_empty() {
            return Err(MolError::Empty);
        }
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for (i, bond) in bonds.iter().enumerate() {
            for atom in [bond.a, bond.b] {
                if atom >= n {
                    return Err(MolError::BadEndpoint {
                        bond: i,
                        atom,
                        n_atoms: n,
                    });
                }
            }
            if bond.a == bond.b {
                return Err(MolError::SelfLoop {
                    bond: i,
                    atom: bond.a,
                });
            }
            let key = (bond.a.min(bond.b), bond.a.max(bond.b));
            if !seen.insert(key) {
                return Err(MolError::DuplicateBond { a: key.0, b: key.1 });
            }
            if bond.order == BondOrder::Aromatic
                && !(atoms[bond.a].aromatic && atoms[bond.b].aromatic)
            {
                return Err(MolError::AromaticMismatch { bond: i });
            }
            adjacency[bond.a].push((bond.b, i));
            adjacency[bond.b].push((bond.a, i));
        }
        let components = count_components(&adjacency);
        if components != 1 {
            return Err(MolError::Disconnected { components });
        }
        let ring_bonds = ring_bond_flags(&adjacency, bonds.len());
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.in_ring = adjacency[i].iter().any(|&(_, b)| ring_bonds[b]);
        }
        Ok(Self {
            atoms,
            bonds,
            name: None,
            adjacency,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor atom, bond index)` pairs.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Whether each bond lies on a cycle.
    pub fn ring_bonds(&self) -> Vec<bool> {
        ring_bond_flags(&self.adjacency, self.bonds.len())
    }

    /// Cyclomatic number: the size of a smallest set of smallest rings.
    pub fn ring_count(&self) -> usize {
        self.bonds.len() + 1 - self.atoms.len()
    }

    /// Average molecular weight including implicit hydrogens.
    pub fn molecular_weight(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.element.mass() + a.explicit_h_count as f64 * Element::H.mass())
            .sum()
    }

    /// Applies `perm` (old index -> new index) to atoms and bonds.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond::new(perm[b.a], perm[b.b], b.order))
            .collect();
        let mut m = Molecule::new(atoms, bonds).expect("permutation preserves validity");
        m.name = self.name.clone();
        m
    }
}

fn count_components(adjacency: &[Vec<(usize, usize)>]) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in &adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    components
}

/// A bond is a ring bond iff it is not a bridge.
fn ring_bond_flags(adjacency: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<bool> {
    let n = adjacency.len();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut ring = vec![true; n_bonds];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (vertex, parent edge, next neighbor cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&(v, parent_edge, cursor)) = stack.last() {
            if cursor < adjacency[v].len() {
                let (u, e) = adjacency[v][cursor];
                stack.last_mut().unwrap().2 += 1;
                if e == parent_edge {
                    continue;
                }
                if disc[u] == usize::MAX {
                    disc[u] = timer;
                    low[u] = timer;
                    timer += 1;
                    stack.push((u, e, 0));
                } else {
                    low[v] = low[v].min(disc[u]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] > disc[p] {
                        ring[parent_edge] = false;
                    }
                }
            }
        }
    }
    ring
}
