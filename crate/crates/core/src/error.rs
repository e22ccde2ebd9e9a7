use thiserror::Error;

/// Every failure mode surfaced by the simulator.
///
/// The `Display` form is a single line starting with the error kind, so the
/// command-line tool can print it as a machine-parseable record.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("DivisibilityError: {0}")]
    Divisibility(String),
    #[error("RangeError: {0}")]
    Range(String),
    #[error("DimMismatch: {0}")]
    DimMismatch(String),
    #[error("LengthError: {0}")]
    Length(String),
    #[error("ScaleError: {0}")]
    Scale(String),
    #[error("NoPathDetected")]
    NoPathDetected,
    #[error("MappingError: {0}")]
    Mapping(String),
    #[error("ZeroGainError: {0}")]
    ZeroGain(String),
    #[error("InfeasibleError: {0}")]
    Infeasible(String),
    #[error("ZeroNormError")]
    ZeroNorm,
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("UnknownExperiment: {0}")]
    UnknownExperiment(String),
    #[error("UnknownAxis: {0}")]
    UnknownAxis(String),
    #[error("IoError: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
