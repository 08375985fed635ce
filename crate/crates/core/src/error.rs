use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Hankel depth {depth} exceeds sequence length {len}")]
    InvalidDepth { depth: usize, len: usize },

    #[error("block rows {a}..={b} out of range for depth {depth}")]
    InvalidIndex { a: usize, b: usize, depth: usize },

    #[error("linear system is inconsistent (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("output is not a steady-state output (residual {residual:.3e})")]
    InfeasibleOutput { residual: f64 },

    #[error("data input is not persistently exciting of order {order}")]
    InsufficientExcitation { order: usize },

    #[error("data trajectory too short: need at least {needed} samples, got {got}")]
    DataTooShort { needed: usize, got: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("no steady state: {0}")]
    NoSteadyState(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("initial window inconsistent with data (residual {residual:.3e})")]
    InconsistentWindow { residual: f64 },

    #[error("data generation failed: {0}")]
    GenerationFailure(String),

    #[error("config: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidDepth { .. } => "invalid-depth",
            Error::InvalidIndex { .. } => "invalid-index",
            Error::Infeasible { .. } => "infeasible",
            Error::InfeasibleOutput { .. } => "infeasible-output",
            Error::InsufficientExcitation { .. } => "insufficient-excitation",
            Error::DataTooShort { .. } => "data-too-short",
            Error::InvalidSystem(_) => "invalid-system",
            Error::NoSteadyState(_) => "no-steady-state",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::InconsistentWindow { .. } => "inconsistent-window",
            Error::GenerationFailure(_) => "generation-failure",
            Error::Config(_) => "config",
            Error::Step { source, .. } => source.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
