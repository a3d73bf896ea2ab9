use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A latency cap removed every candidate pipeline period.
    #[error("no feasible pipeline period under constraint(s): {0}")]
    ConstraintFilter(String),

    #[error("search space too large: {size} tuples exceeds guard {guard}")]
    GuardExceeded { size: u128, guard: u128 },

    #[error("simulation deadlock; blocked stages: {0:?}")]
    Deadlock(Vec<usize>),

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn unknown(what: &'static str, name: impl Into<String>) -> Self {
        Error::Unknown {
            what,
            name: name.into(),
        }
    }

    /// True for errors that mean "no design exists" rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::ConstraintFilter(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
