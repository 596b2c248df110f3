use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    /// A log argument (intensity at an event, or intensity minus the barrier
    /// bound on a grid point) was not strictly positive.
    #[error("infeasible intensity {value} at {site} index {index}")]
    Infeasible {
        site: &'static str,
        index: usize,
        value: f64,
    },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("intensity {observed} exceeds thinning bound {bound}")]
    Domination { observed: f64, bound: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
