use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("point ({x1}, {x2}) lies outside the domain [0, {a}] x [0, {b}]")]
    Domain { x1: f64, x2: f64, a: f64, b: f64 },

    #[error("non-finite quadrature weight at cell ({i}, {j})")]
    Quadrature { i: usize, j: usize },

    #[error("radius {radius} is not resolvable on a grid with spacing {h}")]
    Resolution { radius: f64, h: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence after {iterations} iterations (best value {best}, last change {residual:e})")]
    Convergence {
        iterations: usize,
        best: f64,
        residual: f64,
        best_iterate: Vec<f64>,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("grid {nx}x{ny} exceeds the dense oracle limit of {limit}x{limit}")]
    SizeGuard { nx: usize, ny: usize, limit: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
