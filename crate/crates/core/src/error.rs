use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("IoU undefined: both boxes have zero area")]
    UndefinedIou,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero radius: vertex coincides with the sector origin")]
    ZeroRadius,
    #[error("zero diagonal: bounding box is degenerate")]
    ZeroDiagonal,
    #[error("too few vertices: {0} pass the threshold, need at least 3")]
    TooFewVertices(usize),
    #[error("label {index} has center ({x}, {y}) outside the {grid_w}x{grid_h} grid")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        grid_w: usize,
        grid_h: usize,
    },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("infeasible k: {k} clusters requested but only {distinct} distinct samples")]
    InfeasibleK { k: usize, distinct: usize },
    #[error("degenerate blob: only {0} usable boundary points")]
    DegenerateBlob(usize),
    #[error("infeasible config: {0}")]
    InfeasibleConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
