use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every part of the core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its documented precondition.
    InvalidParameter(String),
    /// Two operands do not have conformant shapes.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// The output map hit its singularity (e.g. the MEMS capacitor gap closed).
    SingularOutput { value: f64, tolerance: f64 },
    /// Simulation produced a non-finite state.
    NonFiniteState { traj_id: Option<u64>, step: usize },
    /// Dictionary evaluation produced a non-finite activation.
    NonFiniteActivation { layer: usize },
    /// Training loss became non-finite.
    Diverged { stage: &'static str, epoch: usize },
    /// A coordinate has zero variance and cannot be standardized.
    ZeroVariance { coordinate: String },
    /// An input data set is empty or too small for the operation.
    InsufficientData(String),
    /// The matrix to pseudo-invert is identically zero.
    ZeroMatrix,
    /// The operator is defective or too close to it for a modal decomposition.
    Defective { condition: f64 },
    /// A matrix lacks the rank an operation requires.
    RankDeficient {
        context: &'static str,
        rank: usize,
        required: usize,
        hint: Option<usize>,
    },
    /// A model violates the block zero pattern it claims to have.
    StructureViolation(String),
    /// A decomposition identity failed its verification.
    VerificationFailed { what: &'static str, residual: f64 },
    /// A metric is not defined for the given inputs.
    UndefinedMetric(&'static str),
    /// The dictionary already carries a constant observable.
    ConstantAlreadyPresent,
    /// The operation needs a state-inclusive dictionary.
    NotStateInclusive,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::SingularOutput { value, tolerance } => write!(
                f,
                "output map is singular: |denominator| = {value:e} below tolerance {tolerance:e}"
            ),
            Error::NonFiniteState { traj_id, step } => match traj_id {
                Some(id) => write!(f, "non-finite state in trajectory {id} at step {step}"),
                None => write!(f, "non-finite state at step {step}"),
            },
            Error::NonFiniteActivation { layer } => {
                write!(f, "non-finite activation in layer {layer}")
            }
            Error::Diverged { stage, epoch } => {
                write!(f, "training diverged in stage '{stage}' at epoch {epoch}")
            }
            Error::ZeroVariance { coordinate } => {
                write!(f, "coordinate {coordinate} has zero variance")
            }
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::ZeroMatrix => write!(f, "matrix is identically zero"),
            Error::Defective { condition } => write!(
                f,
                "operator is defective or near-defective (eigenvector condition number {condition:e})"
            ),
            Error::RankDeficient {
                context,
                rank,
                required,
                hint,
            } => {
                write!(f, "{context}: rank {rank} < required {required}")?;
                if let Some(h) = hint {
                    write!(f, " (try N = {h})")?;
                }
                Ok(())
            }
            Error::StructureViolation(msg) => write!(f, "structure violation: {msg}"),
            Error::VerificationFailed { what, residual } => {
                write!(f, "{what} verification failed (residual {residual:e})")
            }
            Error::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
            Error::ConstantAlreadyPresent => {
                write!(f, "dictionary already contains the constant observable")
            }
            Error::NotStateInclusive => write!(f, "dictionary is not state-inclusive"),
        }
    }
}

impl core::error::Error for Error {}
