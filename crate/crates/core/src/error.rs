use thiserror::Error;

/// Errors raised across the divergence algebra, MDP tools, oracles and trainers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlexError {
    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("threshold beta = {beta} is outside the domain of branch {branch}")]
    InvalidThreshold { beta: f64, branch: String },
    #[error("derivative of {0} is not strictly monotone at the join")]
    NonInvertible(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown preset or divergence `{0}`")]
    UnknownPreset(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("invalid size: {0}")]
    Size(String),
    #[error("no checkpoint reaches {target}% of expert performance (closest {closest:.1}%)")]
    Calibration { target: f64, closest: f64 },
    #[error("dataset does not cover state {0}")]
    Coverage(usize),
    #[error("Bellman error left the conjugate domain during the solve: {0}")]
    DomainBlowup(String),
    #[error("no flow on the dataset support satisfies the occupancy constraint: {0}")]
    Infeasible(String),
    #[error("non-finite value in {table} at step {step}")]
    Nan { table: &'static str, step: u64 },
    #[error("zero-norm vector in cosine similarity")]
    DegenerateVector,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FlexError {
    fn from(e: std::io::Error) -> Self {
        FlexError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FlexError>;
