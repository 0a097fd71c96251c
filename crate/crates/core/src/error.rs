use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum PidError {
    #[error("tensor is empty")]
    Empty,

    #[error("negative entry {value} at flat index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("non-finite entry at flat index {0}")]
    NonFiniteEntry(usize),

    #[error("total mass is zero")]
    ZeroMass,

    #[error("dims {dims:?} do not match {len} entries")]
    ShapeMismatch { dims: [usize; 3], len: usize },

    #[error("{cells} cells exceed the dense storage limit of {limit}")]
    TooLarge { cells: usize, limit: usize },

    #[error("infeasible support: slice ({index}, y={y}) has no mass but target requires {target}")]
    InfeasibleSupport { index: usize, y: usize, target: f64 },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("distribution violates the pairwise marginals by {deviation:e} (limit {limit:e})")]
    MarginalDeviation { deviation: f64, limit: f64 },

    #[error("{dof} degrees of freedom exceed the exact-solver bound of {max}")]
    TooManyDegreesOfFreedom { dof: usize, max: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("controller already transitioned to joint training")]
    AlreadyTransitioned,

    #[error("trainer failed at epoch {epoch}: {message}")]
    Trainer { epoch: usize, message: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PidError>;
