use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown token symbol `{0}`")]
    UnknownToken(String),
    #[error("library contains no terminal token")]
    NoTerminal,
    #[error("duplicate token `{0}` in library")]
    DuplicateToken(String),
    #[error("traversal is incomplete: {0} node(s) unselected")]
    IncompleteTraversal(usize),
    #[error("token at position {0} follows a completed traversal")]
    TrailingToken(usize),
    #[error("empty traversal")]
    EmptyTraversal,
    #[error("variable index {index} out of range for {dims}-column input")]
    VariableOutOfRange { index: usize, dims: usize },
    #[error("expected {expected} constants, got {got}")]
    ConstantCountMismatch { expected: usize, got: usize },
    #[error("dataset must have at least 2 rows, got {0}")]
    DatasetTooSmall(usize),
    #[error("dataset row {row} has {got} columns, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("target values are constant (zero standard deviation)")]
    ConstantTargets,
    #[error("record length {record} does not match traversal length {traversal}")]
    RecordLengthMismatch { record: usize, traversal: usize },
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
