use crate::lattice::Boundary;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{op} requires {expected:?} boundary conditions")]
    WrongBoundary { op: &'static str, expected: Boundary },

    #[error("index {index} outside the valid range {lo}..={hi}")]
    IndexOutOfRange { index: i64, lo: i64, hi: i64 },

    #[error("state is not skew-symmetric: max asymmetry {asymmetry:e}")]
    Asymmetric { asymmetry: f64 },

    #[error("time step {dt} violates the stability bound: dt * omega_max = {product} >= {limit}")]
    Unstable { dt: f64, product: f64, limit: f64 },

    #[error("samples must arrive with increasing time: got t = {t} after t = {prev}")]
    NonMonotoneTime { prev: f64, t: f64 },

    #[error("non-positive energy {value:e} at mode k = {k}")]
    NonPositiveEnergy { k: i64, value: f64 },

    #[error("fit window holds {points} points, at least {min} are required")]
    WindowTooShort { points: usize, min: usize },

    #[error("spectrum spans {decades:.2} decades, at least 2 are required")]
    NarrowSpectrum { decades: f64 },

    #[error("weighted norm overflows f64")]
    NormOverflow,

    #[error("time mismatch: expected {expected}, got {got}")]
    TimeMismatch { expected: f64, got: f64 },

    #[error("integration aborted at t = {t}: non-finite state (last good checkpoint at t = {last_good:?})")]
    Diverged { t: f64, last_good: Option<f64> },

    #[error("mixed provenance: config hash {found} does not match {expected}")]
    Provenance { expected: String, found: String },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::InvalidConfig(_)
            | Error::Unstable { .. }
            | Error::Toml(_)
            | Error::WrongBoundary { .. } => 2,
            Error::Diverged { .. } | Error::NonFinite { .. } | Error::NormOverflow => 3,
            Error::NonPositiveEnergy { .. }
            | Error::WindowTooShort { .. }
            | Error::NarrowSpectrum { .. } => 4,
            Error::Provenance { .. } | Error::Parse { .. } | Error::Csv(_) => 5,
            _ => 1,
        }
    }
}
