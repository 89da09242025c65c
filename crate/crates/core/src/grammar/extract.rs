use std::collections::BTreeMap;

use super::decompose::decompose_molecule;
use super::{Grammar, GrammarError, Result, RuleBody, RuleSequence};
use crate::hypergraph::{AtomLabel, Externals, Hypergraph, Symbol};
use crate::molgraph::{canonical_atom_ranks, Molecule};

/// Induces a grammar from `corpus` and returns, per molecule, the rule
/// sequence that derives it.
pub fn extract_grammar(corpus: &[Molecule]) -> Result<(Grammar, Vec<RuleSequence>)> {
    if corpus.is_empty() {
        return Err(GrammarError::EmptyCorpus);
    }
    let per_molecule: Vec<Vec<(Vec<u8>, RuleBody)>> = corpus.iter().map(molecule_rules).collect();
    let bodies: Vec<RuleBody> = per_molecule
        .iter()
        .flat_map(|rules| rules.iter().map(|(_, b)| b.clone()))
        .collect();
    let grammar = Grammar::from_bodies(bodies)?;
    let sequences = per_molecule
        .iter()
        .map(|rules| {
            let ids = rules
                .iter()
                .map(|(code, _)| grammar.lookup(code).expect("rule registered above"))
                .collect();
            RuleSequence::new_unchecked(ids)
        })
        .collect();
    Ok((grammar, sequences))
}

/// Parses `m` with a fixed grammar; fails if any of its rules is missing.
pub fn parse_molecule(m: &Molecule, g: &Grammar, index: usize) -> Result<RuleSequence> {
    let ids = molecule_rules(m)
        .iter()
        .map(|(code, _)| g.lookup(code).ok_or(GrammarError::ParseError { index }))
        .collect::<Result<Vec<_>>>()?;
    Ok(RuleSequence::new_unchecked(ids))
}

struct BagRule {
    code: Vec<u8>,
    body: RuleBody,
    /// Bonds glued to the parent, in external order.
    externals: Vec<usize>,
    /// Child bags in the order their nonterminals appear in the rhs.
    children: Vec<usize>,
}

/// One rule per bag of the decomposition, in leftmost-derivation order.
fn molecule_rules(m: &Molecule) -> Vec<(Vec<u8>, RuleBody)> {
    let rank = canonical_atom_ranks(m);
    let tree = decompose_molecule(m, &rank);

    let mut bfs = vec![tree.root];
    let mut k = 0;
    while k < bfs.len() {
        bfs.extend(tree.bags[bfs[k]].children.iter().copied());
        k += 1;
    }
    let mut built: BTreeMap<usize, BagRule> = BTreeMap::new();
    for &b in bfs.iter().rev() {
        let rule = bag_rule(m, &tree.bags, b, &built);
        built.insert(b, rule);
    }

    let mut out = Vec::with_capacity(tree.bags.len());
    let mut stack = vec![tree.root];
    while let Some(b) = stack.pop() {
        let rule = built.remove(&b).expect("each bag visited once");
        stack.extend(rule.children.iter().rev());
        out.push((rule.code, rule.body));
    }
    out
}

fn bag_rule(
    m: &Molecule,
    bags: &[super::Bag],
    b: usize,
    built: &BTreeMap<usize, BagRule>,
) -> BagRule {
    let bag = &bags[b];
    let owned: Vec<usize> = bag.owned_atoms().collect();

    let mut bonds: Vec<usize> = owned
        .iter()
        .flat_map(|&a| m.neighbors(a).iter().map(|&(_, bond)| bond))
        .collect();
    bonds.sort_unstable();
    bonds.dedup();
    let local = |bond: usize| bonds.binary_search(&bond).expect("bond in rule");

    let mut rhs = Hypergraph::new();
    for &bond in &bonds {
        rhs.add_hypernode(m.bonds()[bond].order);
    }
    for &a in &owned {
        let mut inc: Vec<usize> = m
            .neighbors(a)
            .iter()
            .map(|&(_, bond)| local(bond))
            .collect();
        inc.sort_unstable();
        rhs.add_hyperedge(Symbol::Terminal(AtomLabel::of(&m.atoms()[a])), inc);
    }
    let mut child_edges = Vec::with_capacity(bag.children.len());
    for &c in &bag.children {
        let ext = &built[&c].externals;
        let sig = ext.iter().map(|&bond| m.bonds()[bond].order).collect();
        let inc = ext.iter().map(|&bond| local(bond)).collect();
        child_edges.push((rhs.add_hyperedge(Symbol::Nonterminal(sig), inc), c));
    }

    let (lhs, mut externals) = match bag.parent_atom {
        None => (Symbol::Start, Vec::new()),
        Some(p) => {
            let ext: Vec<usize> = bag
                .bonds
                .iter()
                .copied()
                .filter(|&bond| m.bonds()[bond].a == p || m.bonds()[bond].b == p)
                .map(local)
                .collect();
            let canon = rhs.canonical(Externals::Unordered(&ext));
            let offset = rhs.hyperedges.len();
            let mut ext = ext;
            ext.sort_by_key(|&v| canon.position[offset + v]);
            let sig = ext.iter().map(|&v| rhs.hypernodes[v]).collect();
            (Symbol::Nonterminal(sig), ext)
        }
    };

    // renumber everything into canonical order
    let canon = rhs.canonical(Externals::Ordered(&externals));
    let n_edges = rhs.hyperedges.len();
    let mut edge_order: Vec<usize> = (0..n_edges).collect();
    edge_order.sort_by_key(|&e| canon.position[e]);
    let mut node_order: Vec<usize> = (0..rhs.hypernodes.len()).collect();
    node_order.sort_by_key(|&v| canon.position[n_edges + v]);
    let mut node_new = vec![0; node_order.len()];
    for (new, &old) in node_order.iter().enumerate() {
        node_new[old] = new;
    }
    let mut canonical = Hypergraph::new();
    for &old in &node_order {
        canonical.add_hypernode(rhs.hypernodes[old]);
    }
    for &old in &edge_order {
        let e = &rhs.hyperedges[old];
        let mut inc: Vec<usize> = e.incidence.iter().map(|&v| node_new[v]).collect();
        if e.symbol.is_terminal() {
            inc.sort_unstable();
        }
        canonical.add_hyperedge(e.symbol.clone(), inc);
    }
    let parent_externals: Vec<usize> = externals.iter().map(|&v| bonds[v]).collect();
    for v in &mut externals {
        *v = node_new[*v];
    }
    child_edges.sort_by_key(|&(e, _)| canon.position[e]);

    let code = super::rule_code(&lhs, &canonical, &externals);
    BagRule {
        code,
        body: (lhs, canonical, externals),
        externals: parent_externals,
        children: child_edges.into_iter().map(|(_, c)| c).collect(),
    }
}
