use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode raised by the solvers, estimators and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation of `{term}` produced a non-finite value at {point}")]
    Evaluation { term: String, point: String },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("expression parse error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("growth condition violated: {0}")]
    Growth(String),

    #[error("simulation produced a non-finite state at t={t} on path {path}")]
    Simulation { t: f64, path: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("PDE solution blew up at t={t}, x={x}: |u|={value}")]
    BlowUp { t: f64, x: f64, value: f64 },

    #[error("CFL restriction violated: dt={dt} exceeds the limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("rate fit rejected: {0}")]
    Fit(String),

    #[error("bin occupancy floor violated at knot {knot}: {count} paths per bin < {floor}")]
    Occupancy { knot: usize, count: usize, floor: usize },

    #[error("backward recursion diverged at knot {knot}: |Y|={value} exceeds guard {limit}")]
    Divergence { knot: usize, value: f64, limit: f64 },

    #[error("bound kind mismatch: expected {expected}, found {found}")]
    Kind { expected: String, found: String },

    #[error("temporal Z bound is undefined at t={t} >= T={horizon}")]
    TerminalTime { t: f64, horizon: f64 },

    #[error("recursion is not a contraction: a*l = {0} >= 1")]
    Contract(f64),

    #[error("fixed point not reached in {iterations} iterations (best value {best})")]
    Iteration { iterations: usize, best: f64 },

    #[error("non-finite finite-difference gradient at {0}")]
    Gradient(String),

    #[error("dominance precondition failed: {0}")]
    Dominance(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
