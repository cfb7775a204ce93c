use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("initial cell size {0} is not 2^-j for an integer j >= 0")]
    InvalidCellSize(f64),
    #[error("boundary edge ({start:?})-({end:?}) is not contained in any declared boundary face")]
    UnclassifiedEdge { start: Point2, end: Point2 },
    #[error("refinement beyond level {0} is not supported")]
    MaxLevelExceeded(u32),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("cell {0} is not active in this mesh")]
    InactiveCell(usize),
    #[error("point ({}, {}) lies outside the domain", .0.x, .0.y)]
    OutsideDomain(Point2),
    #[error("polynomial degree {0} is not supported (expected 1 or 2)")]
    UnsupportedDegree(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("sparse LU factorization failed: {0}")]
    Factorization(String),
    #[error("singular system (pivot ratio estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("relative residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("dimension mismatch: matrix {matrix} vs vector {vector}")]
    Dimension { matrix: usize, vector: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}` in `{text}`")]
    UnknownKey { line: usize, key: String, text: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Inconsistent(String),
}

/// Errors surfaced by a full run.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
