use crate::ir::{EdgeId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} does not fit {base_width} bits at {frac_bits} fractional bits")]
    Range {
        value: f64,
        frac_bits: u32,
        base_width: u32,
    },

    #[error("scale mismatch: {left} vs {right} fractional bits")]
    ScaleMismatch { left: u32, right: u32 },

    #[error("cannot truncate {shift} bits from a value with {scale} fractional bits")]
    BadShift { shift: u32, scale: u32 },

    #[error("{kind} expects {expected} input(s), got {got}")]
    Arity {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("graph contains a cycle through node {0}")]
    Cycle(NodeId),

    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),

    #[error(
        "field of {field_bits} bits is too small for node {node}: needs {required} bits with all inputs at base width"
    )]
    FieldTooSmall {
        node: NodeId,
        required: u32,
        field_bits: u32,
    },

    #[error("node {node} overflows but edge {edge} has no fractional bits left to drop")]
    UntruncatableEdge { node: NodeId, edge: EdgeId },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cost table has no entry for a {0}-bit field")]
    MissingCostEntry(u32),

    #[error("speedup undefined: truncation time is zero")]
    DivideByZero,

    #[error("input mismatch: {0}")]
    Input(String),

    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable tag used in machine-readable diagnostics.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Range { .. } => "RangeError",
            Error::ScaleMismatch { .. } => "ScaleMismatch",
            Error::BadShift { .. } => "BadShift",
            Error::Arity { .. } => "ArityError",
            Error::Shape(_) => "ShapeError",
            Error::Cycle(_) => "CycleError",
            Error::UnknownEdge(_) => "UnknownEdge",
            Error::FieldTooSmall { .. } => "FieldTooSmall",
            Error::UntruncatableEdge { .. } => "UntruncatableEdge",
            Error::Config(_) => "ConfigError",
            Error::MissingCostEntry(_) => "MissingCostEntry",
            Error::DivideByZero => "DivideByZero",
            Error::Input(_) => "InputError",
            Error::UnknownAxis(_) => "UnknownAxis",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}
