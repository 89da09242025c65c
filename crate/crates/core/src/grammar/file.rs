use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Grammar, GrammarError, ProductionRule, Result};
use crate::hypergraph::{AtomLabel, Hypergraph, Symbol};
use crate::molgraph::{BondOrder, Element};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    format_version: u32,
    label_alphabet: Vec<BondOrder>,
    rules: Vec<RuleFile>,
    start_rule_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    id: usize,
    lhs: LhsFile,
    rhs: RhsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LhsFile {
    kind: LhsKind,
    signature: Vec<BondOrder>,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum LhsKind {
    Start,
    Nonterminal,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RhsFile {
    hypernodes: Vec<BondOrder>,
    hyperedges: Vec<EdgeFile>,
    externals: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    symbol: SymbolFile,
    incidence: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum SymbolFile {
    Terminal {
        element: Element,
        charge: i8,
        aromatic: bool,
        h_count: u8,
    },
    Nonterminal {
        signature: Vec<BondOrder>,
    },
}

/// Deterministic pretty-printed JSON.
pub fn write_grammar(g: &Grammar) -> String {
    let file = GrammarFile {
        format_version: FORMAT_VERSION,
        label_alphabet: g.label_alphabet().to_vec(),
        rules: g.rules().iter().map(rule_to_file).collect(),
        start_rule_ids: g.start_rule_ids().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("grammar serializes");
    text.push('\n');
    text
}

fn rule_to_file(r: &ProductionRule) -> RuleFile {
    let lhs = match &r.lhs {
        Symbol::Nonterminal(sig) => LhsFile {
            kind: LhsKind::Nonterminal,
            signature: sig.clone(),
        },
        _ => LhsFile {
            kind: LhsKind::Start,
            signature: Vec::new(),
        },
    };
    let hyperedges = r
        .rhs
        .hyperedges
        .iter()
        .map(|e| EdgeFile {
            symbol: match &e.symbol {
                Symbol::Terminal(a) => SymbolFile::Terminal {
                    element: a.element,
                    charge: a.charge,
                    aromatic: a.aromatic,
                    h_count: a.h_count,
                },
                Symbol::Nonterminal(sig) => SymbolFile::Nonterminal {
                    signature: sig.clone(),
                },
                Symbol::Start => unreachable!("validated rules never contain start"),
            },
            incidence: e.incidence.clone(),
        })
        .collect();
    RuleFile {
        id: r.id,
        lhs,
        rhs: RhsFile {
            hypernodes: r.rhs.hypernodes.clone(),
            hyperedges,
            externals: r.externals.clone(),
        },
    }
}

/// Parses and fully revalidates a grammar file: rule invariants, canonical
/// ordering of ids, uniqueness and completeness.
pub fn read_grammar(text: &str) -> Result<Grammar> {
    let file: GrammarFile =
        serde_json::from_str(text).map_err(|e| GrammarError::Format(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(GrammarError::Format(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let mut bodies = Vec::with_capacity(file.rules.len());
    for (i, r) in file.rules.into_iter().enumerate() {
        if r.id != i {
            return Err(GrammarError::Format(format!(
                "rule at position {i} has id {}",
                r.id
            )));
        }
        let lhs = match r.lhs.kind {
            LhsKind::Start if r.lhs.signature.is_empty() => Symbol::Start,
            LhsKind::Start => {
                return Err(GrammarError::Format(format!(
                    "start rule {i} has a signature"
                )))
            }
            LhsKind::Nonterminal => Symbol::Nonterminal(r.lhs.signature),
        };
        let mut rhs = Hypergraph::new();
        rhs.hypernodes = r.rhs.hypernodes;
        for e in r.rhs.hyperedges {
            let symbol = match e.symbol {
                SymbolFile::Terminal {
                    element,
                    charge,
                    aromatic,
                    h_count,
                } => Symbol::Terminal(AtomLabel {
                    element,
                    charge,
                    aromatic,
                    h_count,
                }),
                SymbolFile::Nonterminal { signature } => Symbol::Nonterminal(signature),
            };
            rhs.add_hyperedge(symbol, e.incidence);
        }
        bodies.push((lhs, rhs, r.rhs.externals));
    }
    let n = bodies.len();
    let g = Grammar::from_bodies(bodies)?;
    if g.len() != n {
        return Err(GrammarError::Format("duplicate rules".into()));
    }
    // ids must follow canonical-code order, which from_bodies re-derives
    if write_grammar(&g) != canonical_rewrite(text)? {
        return Err(GrammarError::Format(
            "rules are not in canonical order".into(),
        ));
    }
    if g.start_rule_ids() != file.start_rule_ids.as_slice()
        || g.label_alphabet() != file.label_alphabet.as_slice()
    {
        return Err(GrammarError::Format(
            "start_rule_ids or label_alphabet inconsistent".into(),
        ));
    }
    Ok(g)
}

/// Re-serializes the parsed document so formatting differences do not
/// count as reordering.
fn canonical_rewrite(text: &str) -> Result<String> {
    let file: GrammarFile =
        serde_json::from_str(text).map_err(|e| GrammarError::Format(e.to_string()))?;
    let mut out = serde_json::to_string_pretty(&file).expect("grammar serializes");
    out.push('\n');
    Ok(out)
}

pub fn grammar_hash(g: &Grammar) -> String {
    hex::encode(Sha256::digest(write_grammar(g).as_bytes()))
}

pub fn save_grammar(g: &Grammar, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_grammar(g))?;
    Ok(())
}

pub fn load_grammar(path: impl AsRef<Path>) -> Result<Grammar> {
    read_grammar(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::extract_grammar;
    use crate::molgraph::parse_smiles;

    #[test]
    fn round_trips_byte_identically() {
        let mols: Vec<_> = ["CCO", "c1ccccc1C(=O)N", "C1CC1"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let (g, _) = extract_grammar(&mols).unwrap();
        let text = write_grammar(&g);
        let back = read_grammar(&text).unwrap();
        assert_eq!(write_grammar(&back), text);
        assert_eq!(grammar_hash(&back), grammar_hash(&g));
    }

    #[test]
    fn rejects_tampering() {
        let (g, _) = extract_grammar(&[parse_smiles("CCO").unwrap()]).unwrap();
        let text = write_grammar(&g);
        assert!(
            read_grammar(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err()
        );
        assert!(read_grammar("{}").is_err());
        let swapped = text.replacen("\"id\": 0", "\"id\": 7", 1);
        assert!(read_grammar(&swapped).is_err());
    }
}
