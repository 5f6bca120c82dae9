use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("omega is not a unit vector (|omega| = {norm})")]
    NonUnitOmega { norm: f64 },

    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("velocity box truncates {truncated:e} of the Gaussian mass (limit 1e-8)")]
    ExcessiveTruncation { truncated: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("support violation: reference vanishes on {cells} cells where the density is positive")]
    SupportViolation { cells: usize },

    #[error("DVM table is empty: the velocity lattice admits no conserving quadruple")]
    EmptyTable,

    #[error("time step {dt} violates the positivity guard; admissible dt <= {admissible}")]
    PositivityGuard { dt: f64, admissible: f64 },

    #[error("collision step left {fraction:e} of the mass in negative values (limit 1e-6)")]
    PositivityLoss { fraction: f64 },

    #[error("non-finite value detected at step {step}")]
    NotFinite { step: usize },

    #[error("iterate {iterate} is not monotone: decrease {decrease:e} exceeds tolerance (is c < 2 C_B?)")]
    NonMonotoneIterate { iterate: usize, decrease: f64 },

    #[error("iterate {iterate} has mass {mass} above the initial mass {limit}")]
    MassGrowth { iterate: usize, mass: f64, limit: f64 },

    #[error("inconsistent tuple sets: {0}")]
    InconsistentTuples(String),

    #[error("flux on {count} tuples where theta(f) = 0")]
    FluxOnDegenerateTuples { count: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
