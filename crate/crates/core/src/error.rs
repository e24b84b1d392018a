use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    #[error("variable x{index} at position {pos} exceeds dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },

    #[error("function `{func}` expects {expected} argument(s), found {found}")]
    Arity {
        func: String,
        expected: String,
        found: usize,
    },

    #[error("domain error during evaluation: {0}")]
    Domain(String),

    #[error("cannot differentiate through non-differentiable `{0}`")]
    NonDifferentiable(&'static str),

    #[error("trajectory escaped the domain |x| <= {radius} at t = {t}")]
    EscapedDomain { t: f64, radius: f64 },

    #[error("integrator exceeded max_steps = {0}")]
    MaxStepsExceeded(usize),

    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),

    #[error("orbit unbounded within horizon (escaped at t = {t})")]
    OrbitUnbounded { t: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that mean "the orbit left the numerical domain".
    pub fn is_escape(&self) -> bool {
        matches!(self, Error::EscapedDomain { .. } | Error::OrbitUnbounded { .. })
    }
}
