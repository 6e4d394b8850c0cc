use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, VibError>;

/// Errors emitted by tensor, network, training, and I/O operations.
#[derive(Debug, Clone, PartialEq)]
pub enum VibError {
    /// Operand shapes do not compose.
    Dim { context: &'static str, expected: String, got: String },
    /// Invalid argument or input data.
    Input(String),
    /// An operation was called in the wrong order (e.g. backward before forward).
    State(&'static str),
    /// A numeric argument violated its domain (e.g. omega <= 0).
    Domain { what: &'static str, value: f64 },
    /// Binary parse failure with the byte offset of the first bad byte.
    Parse { offset: usize, message: String },
    /// Config-file rejection; `key` is "section.key" when applicable.
    Config { key: String, message: String },
    /// Training diverged (NaN or runaway loss).
    Diverged { epoch: usize, step: usize, layer: String },
    /// Pruning would leave a layer with zero surviving units.
    DegenerateLayer { layer: String },
    /// Filesystem failure.
    Io { path: String, message: String },
}

impl fmt::Display for VibError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VibError::Dim { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            VibError::Input(msg) => write!(f, "invalid input: {msg}"),
            VibError::State(msg) => write!(f, "invalid state: {msg}"),
            VibError::Domain { what, value } => {
                write!(f, "domain error: {what} = {value} is out of range")
            }
            VibError::Parse { offset, message } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
            VibError::Config { key, message } => write!(f, "config error at '{key}': {message}"),
            VibError::Diverged { epoch, step, layer } => {
                write!(f, "training diverged at epoch {epoch}, step {step} (first non-finite value in {layer})")
            }
            VibError::DegenerateLayer { layer } => {
                write!(f, "pruning empties layer {layer}; lower tau or retrain with smaller gamma")
            }
            VibError::Io { path, message } => write!(f, "io error on {path}: {message}"),
        }
    }
}

impl std::error::Error for VibError {}

impl From<std::io::Error> for VibError {
    fn from(e: std::io::Error) -> Self {
        VibError::Io { path: String::new(), message: e.to_string() }
    }
}
