use crate::hypergraph::{to_molecule, Hypergraph, HypergraphError};
use crate::molgraph::Molecule;

/// A ring system (biconnected component) or a bridge bond; a lone atom
/// forms a bag with no bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    /// Hypernode (bond) indices, ascending.
    pub bonds: Vec<usize>,
    /// Hyperedge (atom) indices, ascending.
    pub atoms: Vec<usize>,
    pub parent: Option<usize>,
    /// Atom shared with the parent bag.
    pub parent_atom: Option<usize>,
    pub children: Vec<usize>,
}

impl Bag {
    pub fn is_ring(&self) -> bool {
        self.bonds.len() > 1
    }

    /// Atoms this bag contributes: all except the one shared with its parent.
    pub fn owned_atoms(&self) -> impl Iterator<Item = usize> + '_ {
        self.atoms
            .iter()
            .copied()
            .filter(move |&a| Some(a) != self.parent_atom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionTree {
    pub bags: Vec<Bag>,
    pub root: usize,
}

pub fn tree_decompose(h: &Hypergraph) -> Result<DecompositionTree, HypergraphError> {
    let m = to_molecule(h)?;
    let rank = crate::molgraph::canonical_atom_ranks(&m);
    Ok(decompose_molecule(&m, &rank))
}

pub(crate) fn decompose_molecule(m: &Molecule, rank: &[usize]) -> DecompositionTree {
    let mut bags: Vec<Bag> = biconnected_components(m)
        .into_iter()
        .map(|mut bonds| {
            bonds.sort_unstable();
            let mut atoms: Vec<usize> = bonds
                .iter()
                .flat_map(|&b| [m.bonds()[b].a, m.bonds()[b].b])
                .collect();
            atoms.sort_unstable();
            atoms.dedup();
            Bag {
                bonds,
                atoms,
                parent: None,
                parent_atom: None,
                children: Vec::new(),
            }
        })
        .collect();
    if bags.is_empty() {
        bags.push(Bag {
            bonds: Vec::new(),
            atoms: vec![0],
            parent: None,
            parent_atom: None,
            children: Vec::new(),
        });
    }
    let rank_key = |bag: &Bag| {
        let mut r: Vec<usize> = bag.atoms.iter().map(|&a| rank[a]).collect();
        r.sort_unstable();
        r
    };
    let root = (0..bags.len())
        .min_by_key(|&i| rank_key(&bags[i]))
        .expect("at least one bag");

    let mut bags_of_atom: Vec<Vec<usize>> = vec![Vec::new(); m.atom_count()];
    for (i, bag) in bags.iter().enumerate() {
        for &a in &bag.atoms {
            bags_of_atom[a].push(i);
        }
    }
    let mut visited = vec![false; bags.len()];
    visited[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(b) = queue.pop_front() {
        let owned: Vec<usize> = bags[b].owned_atoms().collect();
        for a in owned {
            for &c in &bags_of_atom[a] {
                if !visited[c] {
                    visited[c] = true;
                    bags[c].parent = Some(b);
                    bags[c].parent_atom = Some(a);
                    bags[b].children.push(c);
                    queue.push_back(c);
                }
            }
        }
    }
    DecompositionTree { bags, root }
}

/// Bond sets of the biconnected components (iterative Tarjan with an edge
/// stack).
pub(crate) fn biconnected_components(m: &Molecule) -> Vec<Vec<usize>> {
    let n = m.atom_count();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut timer = 0;
    let mut edge_stack: Vec<usize> = Vec::new();
    let mut components = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        while let Some(&(v, parent_edge, cursor)) = stack.last() {
            let nbrs = m.neighbors(v);
            if cursor < nbrs.len() {
                stack.last_mut().unwrap().2 += 1;
                let (u, e) = nbrs[cursor];
                if e == parent_edge {
                    continue;
                }
                if disc[u] == usize::MAX {
                    edge_stack.push(e);
                    disc[u] = timer;
                    low[u] = timer;
                    timer += 1;
                    stack.push((u, e, 0));
                } else if disc[u] < disc[v] {
                    edge_stack.push(e);
                    low[v] = low[v].min(disc[u]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] >= disc[p] {
                        let mut comp = Vec::new();
                        while let Some(e) = edge_stack.pop() {
                            comp.push(e);
                            if e == parent_edge {
                                break;
                            }
                        }
                        components.push(comp);
                    }
                }
            }
        }
    }
    components
}
