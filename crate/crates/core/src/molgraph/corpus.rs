use std::path::Path;

use thiserror::Error;

use super::{parse_smiles, Molecule, SmilesError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: SmilesError },
    #[error("line {line}: invalid property value {value:?}")]
    BadValue { line: usize, value: String },
    #[error("line {line}: expected at most two tab-separated fields")]
    TooManyFields { line: usize },
}

/// One corpus line: the molecule, its source text and optional property.
#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub line: usize,
    pub smiles: String,
    pub molecule: Molecule,
    pub value: Option<f64>,
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

/// Parses `SMILES[<TAB>value]` lines; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let smiles = fields.next().unwrap_or("").trim().to_string();
        let value =
            match fields.next().map(str::trim) {
                None | Some("") => None,
                Some(v) => Some(v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(
                    || CorpusError::BadValue {
                        line,
                        value: v.to_string(),
                    },
                )?),
            };
        if fields.next().is_some() {
            return Err(CorpusError::TooManyFields { line });
        }
        let molecule = parse_smiles(&smiles)
            .map_err(|source| CorpusError::Smiles { line, source })?
            .with_name(format!("line{line}"));
        out.push(CorpusRecord {
            line,
            smiles,
            molecule,
            value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_skips_blanks() {
        let recs = parse_corpus("CCO\t46.07\n\n  \nc1ccccc1\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].value, Some(46.07));
        assert_eq!(recs[1].value, None);
        assert_eq!(recs[1].line, 4);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_corpus("C\nC(\n").unwrap_err();
        assert!(matches!(err, CorpusError::Smiles { line: 2, .. }));
        assert!(matches!(
            parse_corpus("C\tabc").unwrap_err(),
            CorpusError::BadValue { line: 1, .. }
        ));
    }
}
