//! Molecular hypergraphs: atoms become hyperedges, bonds become degree-2
//! hypernodes labeled by bond order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{canonicalize, Canonical, LabeledGraph};
use crate::molgraph::{Atom, Bond, BondOrder, Element, MolError, Molecule};

/// Atom attributes carried by a terminal hyperedge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomLabel {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    pub h_count: u8,
}

impl AtomLabel {
    pub fn of(atom: &Atom) -> Self {
        Self {
            element: atom.element,
            charge: atom.formal_charge,
            aromatic: atom.aromatic,
            h_count: atom.explicit_h_count,
        }
    }

    pub fn to_atom(self) -> Atom {
        let mut atom = Atom::new(self.element);
        atom.formal_charge = self.charge;
        atom.aromatic = self.aromatic;
        atom.explicit_h_count = self.h_count;
        atom
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Terminal(AtomLabel),
    /// Identified by the ordered labels of the hypernodes it attaches to.
    Nonterminal(Vec<BondOrder>),
    Start,
}

impl Symbol {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Symbol::Terminal(_))
    }

    pub fn is_nonterminal(&self) -> bool {
        !self.is_terminal()
    }

    pub(crate) fn label_bytes(&self) -> Vec<u8> {
        match self {
            Symbol::Terminal(a) => vec![
                0,
                a.element.atomic_number(),
                a.charge as u8,
                a.aromatic as u8,
                a.h_count,
            ],
            Symbol::Nonterminal(sig) => {
                let mut v = vec![1, sig.len() as u8];
                v.extend(sig.iter().map(|o| o.code()));
                v
            }
            Symbol::Start => vec![2],
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Terminal(a) => write!(f, "{}", a.element),
            Symbol::Nonterminal(sig) => {
                f.write_str("N[")?;
                for o in sig {
                    write!(f, "{}", o.symbol())?;
                }
                f.write_str("]")
            }
            Symbol::Start => f.write_str("S"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    pub symbol: Symbol,
    /// Attached hypernodes; ordered for nonterminals, arbitrary for terminals.
    pub incidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Hypergraph {
    pub hypernodes: Vec<BondOrder>,
    pub hyperedges: Vec<Hyperedge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HypergraphError {
    #[error("hypergraph is empty")]
    EmptyInput,
    #[error("hyperedge {hyperedge} is still nonterminal")]
    NonterminalRemaining { hyperedge: usize },
    #[error("hyperedge {hyperedge} references missing hypernode {hypernode}")]
    BadIncidence { hyperedge: usize, hypernode: usize },
    #[error("hyperedge {hyperedge} lists hypernode {hypernode} twice")]
    RepeatedIncidence { hyperedge: usize, hypernode: usize },
    #[error("hyperedge {hyperedge} arity does not match its signature")]
    SignatureMismatch { hyperedge: usize },
    #[error("hypernode {hypernode} has {degree} attachments, expected {expected}")]
    HypernodeDegree {
        hypernode: usize,
        degree: usize,
        expected: usize,
    },
    #[error(transparent)]
    Molecule(#[from] MolError),
}

/// Canonical serialization; equal codes mean isomorphic hypergraphs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalCode(pub Vec<u8>);

impl fmt::Display for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(&self.0))
    }
}

/// How external hypernodes are marked when canonicalizing a rule body.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Externals<'a> {
    None,
    Unordered(&'a [usize]),
    Ordered(&'a [usize]),
}

const UNORDERED_EXTERNAL: u8 = 255;

impl Hypergraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_hypernode(&mut self, label: BondOrder) -> usize {
        self.hypernodes.push(label);
        self.hypernodes.len() - 1
    }

    pub fn add_hyperedge(&mut self, symbol: Symbol, incidence: Vec<usize>) -> usize {
        self.hyperedges.push(Hyperedge { symbol, incidence });
        self.hyperedges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.hyperedges.is_empty() && self.hypernodes.is_empty()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.hypernodes.len()];
        for e in &self.hyperedges {
            for &v in &e.incidence {
                if let Some(d) = deg.get_mut(v) {
                    *d += 1;
                }
            }
        }
        deg
    }

    pub fn nonterminal_count(&self) -> usize {
        self.hyperedges
            .iter()
            .filter(|e| e.symbol.is_nonterminal())
            .count()
    }

    /// Checks incidence and signatures, and that every hypernode has two
    /// attachments except the listed externals, which have one.
    pub fn validate(&self, externals: &[usize]) -> Result<(), HypergraphError> {
        for (i, e) in self.hyperedges.iter().enumerate() {
            for (k, &v) in e.incidence.iter().enumerate() {
                if v >= self.hypernodes.len() {
                    return Err(HypergraphError::BadIncidence {
                        hyperedge: i,
                        hypernode: v,
                    });
                }
                if e.incidence[..k].contains(&v) {
                    return Err(HypergraphError::RepeatedIncidence {
                        hyperedge: i,
                        hypernode: v,
                    });
                }
            }
            let sig_ok = match &e.symbol {
                Symbol::Terminal(_) => true,
                Symbol::Start => e.incidence.is_empty(),
                Symbol::Nonterminal(sig) => {
                    sig.len() == e.incidence.len()
                        && sig
                            .iter()
                            .zip(&e.incidence)
                            .all(|(&o, &v)| self.hypernodes[v] == o)
                }
            };
            if !sig_ok {
                return Err(HypergraphError::SignatureMismatch { hyperedge: i });
            }
        }
        for (v, &d) in self.degrees().iter().enumerate() {
            let expected = if externals.contains(&v) { 1 } else { 2 };
            if d != expected {
                return Err(HypergraphError::HypernodeDegree {
                    hypernode: v,
                    degree: d,
                    expected,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn labeled_graph(&self, externals: Externals<'_>) -> LabeledGraph {
        let mut g = LabeledGraph::new();
        for e in &self.hyperedges {
            g.add_vertex(e.symbol.label_bytes());
        }
        let offset = self.hyperedges.len();
        for (v, &order) in self.hypernodes.iter().enumerate() {
            let marker = match externals {
                Externals::None => 0,
                Externals::Unordered(ext) => {
                    if ext.contains(&v) {
                        UNORDERED_EXTERNAL
                    } else {
                        0
                    }
                }
                Externals::Ordered(ext) => {
                    ext.iter().position(|&x| x == v).map_or(0, |p| p as u8 + 1)
                }
            };
            g.add_vertex(vec![3, order.code(), marker]);
        }
        for (i, e) in self.hyperedges.iter().enumerate() {
            let ordered = e.symbol.is_nonterminal();
            for (k, &v) in e.incidence.iter().enumerate() {
                let label = if ordered { k as u32 + 1 } else { 0 };
                g.add_edge(i, offset + v, label);
            }
        }
        g
    }

    /// Canonical labeling; positions `0..hyperedges` index hyperedges, the
    /// rest hypernodes.
    pub(crate) fn canonical(&self, externals: Externals<'_>) -> Canonical {
        canonicalize(&self.labeled_graph(externals))
    }
}

pub fn to_hypergraph(m: &Molecule) -> Hypergraph {
    let mut h = Hypergraph::new();
    for b in m.bonds() {
        h.add_hypernode(b.order);
    }
    for (i, atom) in m.atoms().iter().enumerate() {
        let incidence = m.neighbors(i).iter().map(|&(_, b)| b).collect();
        h.add_hyperedge(Symbol::Terminal(AtomLabel::of(atom)), incidence);
    }
    h
}

/// Drops the hypernodes: hyperedge `i` becomes atom `i`, hypernode `j` bond `j`.
pub fn to_molecule(h: &Hypergraph) -> Result<Molecule, HypergraphError> {
    if h.hyperedges.is_empty() {
        return Err(HypergraphError::EmptyInput);
    }
    if let Some(i) = h.hyperedges.iter().position(|e| e.symbol.is_nonterminal()) {
        return Err(HypergraphError::NonterminalRemaining { hyperedge: i });
    }
    h.validate(&[])?;
    let atoms = h
        .hyperedges
        .iter()
        .map(|e| match &e.symbol {
            Symbol::Terminal(a) => a.to_atom(),
            _ => unreachable!("checked above"),
        })
        .collect();
    let mut ends: Vec<Vec<usize>> = vec![Vec::with_capacity(2); h.hypernodes.len()];
    for (i, e) in h.hyperedges.iter().enumerate() {
        for &v in &e.incidence {
            ends[v].push(i);
        }
    }
    let bonds = ends
        .iter()
        .zip(&h.hypernodes)
        .map(|(e, &order)| Bond::new(e[0], e[1], order))
        .collect();
    Ok(Molecule::new(atoms, bonds)?)
}

pub fn canonical_form(h: &Hypergraph) -> CanonicalCode {
    CanonicalCode(h.canonical(Externals::None).code)
}

/// Canonical code of a molecule's hypergraph; the isomorphism test used
/// throughout.
pub fn molecule_code(m: &Molecule) -> CanonicalCode {
    canonical_form(&to_hypergraph(m))
}
