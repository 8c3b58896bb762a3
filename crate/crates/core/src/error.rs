use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A time or log-SNR argument fell outside the schedule's domain.
    Domain { what: &'static str, value: f64 },
    /// Sampling moves from larger to smaller time; `s < t` was supplied.
    Order { s: f64, t: f64 },
    /// An argument failed validation (zero steps, wrong length, ...).
    Argument(&'static str),
    /// A NaN or infinity appeared in an input or an intermediate state.
    NonFinite { what: &'static str, step: Option<usize> },
    /// Division by a vanishing α or σ while converting predictions.
    Singular { what: &'static str, value: f64 },
    /// Solver and correction settings that cannot be combined.
    Config(&'static str),
    /// The multistep coefficient system could not be solved.
    Grid(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { what, value } => write!(f, "{what} out of domain: {value}"),
            Error::Order { s, t } => write!(f, "step must move backwards in time, got s={s} < t={t}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { what, step: Some(i) } => {
                write!(f, "non-finite {what} at step {i}")
            }
            Error::NonFinite { what, step: None } => write!(f, "non-finite {what}"),
            Error::Singular { what, value } => {
                write!(f, "singular conversion: {what} = {value:e}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Grid(msg) => write!(f, "grid error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    /// True for failures caused by numerics rather than by configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Singular { .. } | Error::Grid(_))
    }
}
