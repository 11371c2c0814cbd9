use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("mode count must be positive")]
    ZeroModes,

    #[error("projection onto {requested} modes exceeds the {available} available")]
    ProjectionTooLarge { requested: usize, available: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh is not quasi-uniform: h_max/h_min = {ratio:.3} exceeds bound {bound}")]
    NotQuasiUniform { ratio: f64, bound: f64 },

    #[error("mesh has {0} interior nodes, more than the dense eigensolver cap of 2048")]
    MeshTooLarge(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("generalized eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("quadrature produced a non-finite value")]
    Quadrature,

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scheme/representation mismatch: {0}")]
    SchemeMismatch(String),

    #[error("increment path has {got} steps, expected {expected}")]
    PathLength { expected: usize, got: usize },

    #[error("rate fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("rate fit needs positive h and error values, got h = {h}, error = {error}")]
    NonPositiveError { h: f64, error: f64 },

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
