use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("row {row} has no applicable class")]
    MaskAllFalse { row: usize },
    #[error("row {row}: target class {target} is masked out")]
    TargetMasked { row: usize, target: usize },
    #[error("index {index} out of range for {len} rows in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("batch norm in training mode needs at least 2 rows, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
