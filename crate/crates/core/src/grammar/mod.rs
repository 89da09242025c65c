//! Molecular hypergraph grammar: rule induction from a corpus, leftmost
//! derivation, and the applicability masks that keep decoding valid.

mod decompose;
mod extract;
mod file;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hypergraph::{to_molecule, Externals, Hypergraph, HypergraphError, Symbol};
use crate::molgraph::{BondOrder, Molecule};

pub use decompose::{tree_decompose, Bag, DecompositionTree};
pub use extract::{extract_grammar, parse_molecule};
pub use file::{
    grammar_hash, load_grammar, read_grammar, save_grammar, write_grammar, FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("rule {rule} does not match the leftmost nonterminal")]
    NoMatch { rule: usize },
    #[error("no nonterminal left to expand")]
    EmptyFrontier,
    #[error("derivation incomplete: {remaining} nonterminals remain")]
    IncompleteDerivation { remaining: usize },
    #[error("unknown rule id {0}")]
    UnknownRule(usize),
    #[error("molecule {index} cannot be parsed by this grammar")]
    ParseError { index: usize },
    #[error("rule {rule}: {source}")]
    InvalidRule {
        rule: usize,
        source: HypergraphError,
    },
    #[error("nonterminal {0} has no production")]
    Incomplete(Symbol),
    #[error("grammar has no start rule")]
    NoStartRule,
    #[error("grammar file: {0}")]
    Format(String),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GrammarError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductionRule {
    pub id: usize,
    /// `Symbol::Start` or a `Symbol::Nonterminal`.
    pub lhs: Symbol,
    pub rhs: Hypergraph,
    /// Rhs hypernodes glued, in order, to the replaced hyperedge's attachments.
    pub externals: Vec<usize>,
}

impl ProductionRule {
    pub fn is_start(&self) -> bool {
        self.lhs == Symbol::Start
    }

    /// Rhs hyperedges that are nonterminal, in rhs order.
    pub fn nonterminals(&self) -> impl Iterator<Item = &Symbol> {
        self.rhs
            .hyperedges
            .iter()
            .map(|e| &e.symbol)
            .filter(|s| s.is_nonterminal())
    }

    fn validate(&self) -> std::result::Result<(), HypergraphError> {
        self.rhs.validate(&self.externals)?;
        let arity_ok = match &self.lhs {
            Symbol::Start => self.externals.is_empty(),
            Symbol::Nonterminal(sig) => {
                sig.len() == self.externals.len()
                    && sig
                        .iter()
                        .zip(&self.externals)
                        .all(|(&o, &v)| self.rhs.hypernodes[v] == o)
            }
            Symbol::Terminal(_) => false,
        };
        let no_start_inside = self
            .rhs
            .hyperedges
            .iter()
            .all(|e| e.symbol != Symbol::Start);
        if arity_ok && no_start_inside && !self.rhs.hyperedges.is_empty() {
            Ok(())
        } else {
            Err(HypergraphError::SignatureMismatch { hyperedge: 0 })
        }
    }
}

pub(crate) fn rule_code(lhs: &Symbol, rhs: &Hypergraph, externals: &[usize]) -> Vec<u8> {
    let lhs_bytes = lhs.label_bytes();
    let mut code = Vec::with_capacity(lhs_bytes.len() + 64);
    code.push(lhs_bytes.len() as u8);
    code.extend(lhs_bytes);
    code.extend(rhs.canonical(Externals::Ordered(externals)).code);
    code
}

/// A body waiting for an id: `(lhs, rhs, externals)`.
pub(crate) type RuleBody = (Symbol, Hypergraph, Vec<usize>);

#[derive(Debug, Clone)]
pub struct Grammar {
    rules: Vec<ProductionRule>,
    start_rule_ids: Vec<usize>,
    dedup_index: BTreeMap<Vec<u8>, usize>,
    label_alphabet: Vec<BondOrder>,
    by_lhs: BTreeMap<Symbol, Vec<usize>>,
    /// Fewest rule applications that eliminate a nonterminal.
    symbol_min_len: BTreeMap<Symbol, usize>,
    /// Fewest applications to finish once this rule is applied (itself included).
    rule_min_len: Vec<usize>,
}

impl Grammar {
    /// Deduplicates, orders rules by canonical code, assigns ids, and checks
    /// that every nonterminal can be eliminated.
    pub(crate) fn from_bodies(bodies: Vec<RuleBody>) -> Result<Self> {
        let mut unique: BTreeMap<Vec<u8>, RuleBody> = BTreeMap::new();
        for body in bodies {
            unique
                .entry(rule_code(&body.0, &body.1, &body.2))
                .or_insert(body);
        }
        let mut rules = Vec::with_capacity(unique.len());
        let mut dedup_index = BTreeMap::new();
        for (id, (code, (lhs, rhs, externals))) in unique.into_iter().enumerate() {
            dedup_index.insert(code, id);
            rules.push(ProductionRule {
                id,
                lhs,
                rhs,
                externals,
            });
        }
        Self::from_rules(rules, dedup_index)
    }

    fn from_rules(
        rules: Vec<ProductionRule>,
        dedup_index: BTreeMap<Vec<u8>, usize>,
    ) -> Result<Self> {
        for r in &rules {
            r.validate()
                .map_err(|source| GrammarError::InvalidRule { rule: r.id, source })?;
        }
        let start_rule_ids: Vec<usize> = rules
            .iter()
            .filter(|r| r.is_start())
            .map(|r| r.id)
            .collect();
        if start_rule_ids.is_empty() {
            return Err(GrammarError::NoStartRule);
        }
        let mut by_lhs: BTreeMap<Symbol, Vec<usize>> = BTreeMap::new();
        for r in &rules {
            by_lhs.entry(r.lhs.clone()).or_default().push(r.id);
        }
        let mut label_alphabet: Vec<BondOrder> = rules
            .iter()
            .flat_map(|r| r.rhs.hypernodes.iter().copied())
            .collect();
        label_alphabet.sort_unstable();
        label_alphabet.dedup();

        let symbol_min_len = min_lengths(&rules);
        for r in &rules {
            for s in r.nonterminals() {
                if !symbol_min_len.contains_key(s) {
                    return Err(GrammarError::Incomplete(s.clone()));
                }
            }
        }
        let rule_min_len = rules
            .iter()
            .map(|r| 1 + r.nonterminals().map(|s| symbol_min_len[s]).sum::<usize>())
            .collect();
        Ok(Self {
            rules,
            start_rule_ids,
            dedup_index,
            label_alphabet,
            by_lhs,
            symbol_min_len,
            rule_min_len,
        })
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn rule(&self, id: usize) -> Result<&ProductionRule> {
        self.rules.get(id).ok_or(GrammarError::UnknownRule(id))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn start_rule_ids(&self) -> &[usize] {
        &self.start_rule_ids
    }

    pub fn label_alphabet(&self) -> &[BondOrder] {
        &self.label_alphabet
    }

    pub(crate) fn lookup(&self, code: &[u8]) -> Option<usize> {
        self.dedup_index.get(code).copied()
    }

    /// Rules whose lhs is `symbol`.
    pub fn rules_for(&self, symbol: &Symbol) -> &[usize] {
        self.by_lhs.get(symbol).map_or(&[], Vec::as_slice)
    }

    /// Fewest rule applications that turn `symbol` into terminals.
    pub fn min_completion(&self, symbol: &Symbol) -> Option<usize> {
        self.symbol_min_len.get(symbol).copied()
    }

    /// Fewest applications that complete a derivation from `state`.
    pub fn min_remaining(&self, state: &DerivationState) -> usize {
        state
            .frontier
            .iter()
            .map(|&e| self.symbol_min_len[&state.current.hyperedges[e].symbol])
            .sum()
    }

    /// Applicable rules that still allow completion within `budget` more
    /// applications.
    pub fn completion_mask(&self, state: &DerivationState, budget: usize) -> Vec<bool> {
        let mut mask = vec![false; self.rules.len()];
        let Some(top) = state.top_symbol() else {
            return mask;
        };
        let rest = self.min_remaining(state) - self.symbol_min_len[top];
        for &id in self.rules_for(top) {
            mask[id] = self.rule_min_len[id] + rest <= budget;
        }
        mask
    }
}

/// Shortest elimination length of every nonterminal, by fixed-point
/// relaxation; unreachable symbols stay absent.
fn min_lengths(rules: &[ProductionRule]) -> BTreeMap<Symbol, usize> {
    let mut best: BTreeMap<Symbol, usize> = BTreeMap::new();
    loop {
        let mut changed = false;
        for r in rules {
            let cost: Option<usize> = r
                .nonterminals()
                .map(|s| best.get(s).copied())
                .try_fold(1usize, |acc, c| c.map(|c| acc + c));
            if let Some(cost) = cost {
                let entry = best.entry(r.lhs.clone()).or_insert(usize::MAX);
                if cost < *entry {
                    *entry = cost;
                    changed = true;
                }
            }
        }
        if !changed {
            return best;
        }
    }
}

/// A partial derivation. The frontier is a stack of nonterminal hyperedge
/// indices; its top is the leftmost nonterminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationState {
    pub current: Hypergraph,
    pub frontier: Vec<usize>,
    pub step_count: usize,
}

impl DerivationState {
    /// A single start hyperedge.
    pub fn initial() -> Self {
        let mut current = Hypergraph::new();
        current.add_hyperedge(Symbol::Start, Vec::new());
        Self {
            current,
            frontier: vec![0],
            step_count: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_empty()
    }

    pub fn top_symbol(&self) -> Option<&Symbol> {
        self.frontier
            .last()
            .map(|&e| &self.current.hyperedges[e].symbol)
    }

    /// Replaces the leftmost nonterminal by the rule's rhs, gluing externals
    /// to its attachments in order.
    pub fn apply(&mut self, rule: &ProductionRule) -> Result<()> {
        let top = *self.frontier.last().ok_or(GrammarError::EmptyFrontier)?;
        if self.current.hyperedges[top].symbol != rule.lhs {
            return Err(GrammarError::NoMatch { rule: rule.id });
        }
        self.frontier.pop();
        let host = std::mem::take(&mut self.current.hyperedges[top].incidence);
        let mut node_map = Vec::with_capacity(rule.rhs.hypernodes.len());
        for (v, &label) in rule.rhs.hypernodes.iter().enumerate() {
            match rule.externals.iter().position(|&x| x == v) {
                Some(k) => node_map.push(host[k]),
                None => node_map.push(self.current.add_hypernode(label)),
            }
        }
        let mut new_nonterminals = Vec::new();
        for (k, e) in rule.rhs.hyperedges.iter().enumerate() {
            let incidence = e.incidence.iter().map(|&v| node_map[v]).collect();
            let slot = if k == 0 {
                self.current.hyperedges[top].symbol = e.symbol.clone();
                self.current.hyperedges[top].incidence = incidence;
                top
            } else {
                self.current.add_hyperedge(e.symbol.clone(), incidence)
            };
            if e.symbol.is_nonterminal() {
                new_nonterminals.push(slot);
            }
        }
        self.frontier.extend(new_nonterminals.into_iter().rev());
        self.step_count += 1;
        Ok(())
    }
}

pub fn apply_rule(s: &DerivationState, r: &ProductionRule) -> Result<DerivationState> {
    let mut next = s.clone();
    next.apply(r)?;
    Ok(next)
}

/// `mask[i]` iff rule `i` matches the leftmost nonterminal.
pub fn applicable_rules(s: &DerivationState, g: &Grammar) -> Vec<bool> {
    let mut mask = vec![false; g.len()];
    if let Some(top) = s.top_symbol() {
        for &id in g.rules_for(top) {
            mask[id] = true;
        }
    }
    mask
}

/// Rule ids in application order; every prefix replays under its grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSequence(Vec<usize>);

impl RuleSequence {
    pub fn new(ids: Vec<usize>, g: &Grammar) -> Result<Self> {
        let mut state = DerivationState::initial();
        for &id in &ids {
            state.apply(g.rule(id)?)?;
        }
        Ok(Self(ids))
    }

    pub(crate) fn new_unchecked(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every intermediate state, starting from the initial one.
    pub fn replay(&self, g: &Grammar) -> Result<Vec<DerivationState>> {
        let mut states = vec![DerivationState::initial()];
        for &id in &self.0 {
            let next = apply_rule(states.last().unwrap(), g.rule(id)?)?;
            states.push(next);
        }
        Ok(states)
    }
}

pub fn derive(seq: &RuleSequence, g: &Grammar) -> Result<Molecule> {
    let mut state = DerivationState::initial();
    for &id in seq.ids() {
        state.apply(g.rule(id)?)?;
    }
    finish(&state)
}

/// Converts a derivation to a molecule once its frontier is empty.
pub fn finish(state: &DerivationState) -> Result<Molecule> {
    if !state.is_complete() {
        return Err(GrammarError::IncompleteDerivation {
            remaining: state.frontier.len(),
        });
    }
    Ok(to_molecule(&state.current)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::molecule_code;
    use crate::molgraph::parse_smiles;

    fn grammar(smiles: &[&str]) -> (Grammar, Vec<RuleSequence>) {
        let mols: Vec<Molecule> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        extract_grammar(&mols).unwrap()
    }

    #[test]
    fn methane_has_one_start_rule() {
        let (g, seqs) = grammar(&["C"]);
        assert_eq!(g.len(), 1);
        assert_eq!(g.start_rule_ids(), &[0]);
        assert_eq!(g.rules()[0].rhs.hyperedges.len(), 1);
        let m = derive(&seqs[0], &g).unwrap();
        assert_eq!(m.atom_count(), 1);
        assert_eq!(m.atoms()[0].explicit_h_count, 4);
    }

    #[test]
    fn mismatch_and_empty_frontier() {
        let (g, seqs) = grammar(&["CCO"]);
        let start = g.start_rule_ids()[0];
        let non_start = (0..g.len()).find(|&i| i != start).unwrap();
        let s0 = DerivationState::initial();
        assert!(matches!(
            apply_rule(&s0, &g.rules()[non_start]),
            Err(GrammarError::NoMatch { .. })
        ));
        let states = seqs[0].replay(&g).unwrap();
        let done = states.last().unwrap();
        assert!(matches!(
            apply_rule(done, &g.rules()[start]),
            Err(GrammarError::EmptyFrontier)
        ));
    }

    #[test]
    fn masks_at_the_ends() {
        let (g, seqs) = grammar(&["CCO", "c1ccccc1C"]);
        let init = applicable_rules(&DerivationState::initial(), &g);
        let starts: Vec<usize> = (0..g.len()).filter(|&i| init[i]).collect();
        assert_eq!(starts, g.start_rule_ids());
        let last = seqs[1].replay(&g).unwrap().pop().unwrap();
        assert!(applicable_rules(&last, &g).iter().all(|&b| !b));
    }

    #[test]
    fn truncated_sequence_is_incomplete() {
        let (g, seqs) = grammar(&["CCCO"]);
        let ids = seqs[0].ids();
        let short = RuleSequence::new(ids[..ids.len() - 1].to_vec(), &g).unwrap();
        assert!(matches!(
            derive(&short, &g),
            Err(GrammarError::IncompleteDerivation { remaining: 1 })
        ));
    }

    #[test]
    fn sequences_round_trip() {
        let smiles = [
            "CCO",
            "c1ccccc1C",
            "C1CC2CCC1C2",
            "OC(=O)c1ccc(N)cc1",
            "C#N",
            "C[N+](=O)[O-]",
        ];
        let (g, seqs) = grammar(&smiles);
        for (s, seq) in smiles.iter().zip(&seqs) {
            let m = parse_smiles(s).unwrap();
            assert_eq!(
                molecule_code(&derive(seq, &g).unwrap()),
                molecule_code(&m),
                "{s}"
            );
        }
    }

    #[test]
    fn completion_mask_respects_budget() {
        let (g, seqs) = grammar(&["CCCCCC"]);
        let s0 = DerivationState::initial();
        let need = g.min_remaining(&s0);
        assert!(g.completion_mask(&s0, need - 1).iter().all(|&b| !b));
        assert!(g.completion_mask(&s0, need).iter().any(|&b| b));
        assert!(seqs[0].len() >= need);
    }
}
