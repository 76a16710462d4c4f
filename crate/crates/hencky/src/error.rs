use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("space dimension must be 2 or 3, got {0}")]
    BadDimension(usize),

    #[error("tensor is not deviatoric: |trace| = {trace:.3e} exceeds tolerance {tol:.3e}")]
    NonDeviatoric { trace: f64, tol: f64 },

    #[error("invalid yield set: {0}")]
    InvalidYieldSet(String),

    #[error("invalid elastic moduli: {0}")]
    InvalidModuli(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("point lies outside the closed domain: ({0:.6}, {1:.6}, {2:.6})")]
    OutsideDomain(f64, f64, f64),

    #[error("field error: {0}")]
    Field(String),

    #[error("boundary condition violated: {0}")]
    BcViolation(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("incompatible divergence data: {0}")]
    IncompatibleRhs(String),

    #[error("singular saddle system: {0}")]
    SingularSystem(String),

    #[error("cover validation failed: {0}")]
    CoverValidation(String),

    #[error("mollification budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("mesh resolution exceeded: {0}")]
    Resolution(String),

    #[error("non-tangential boundary field: {0}")]
    NonTangential(String),

    #[error("non-summable schedule: {0}")]
    NonSummable(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown oracle `{0}`")]
    UnknownOracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
