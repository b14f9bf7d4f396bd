use std::fmt;

/// Everything that can go wrong while building models, certifying a design,
/// or running a closed loop. Variants carry enough context to name the
/// offending quantity in the message.
#[derive(Debug)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    Dimension(String),
    /// The pair (A, B) fails the stabilizability rank test.
    NotStabilizable(String),
    /// A matrix that must be symmetric positive definite is not.
    NotPositiveDefinite(String),
    /// A factorization or inverse square root was refused because the
    /// condition number exceeds the trusted range.
    IllConditioned { what: String, cond: f64 },
    /// The Riccati fixed-point iteration hit its cap before the residual
    /// dropped below tolerance.
    DareDiverged { residual: f64, iterations: usize },
    /// An iterative solve hit its iteration cap.
    SolverStalled { residual: f64, iterations: u64 },
    /// A declared iteration budget does not clear the certified threshold
    /// and the caller did not opt into uncertified operation.
    BudgetBelowThreshold { budget: u64, threshold: f64 },
    /// The contraction-rate selection problem is infeasible as posed.
    CertificateInfeasible(String),
    /// A requested evaluation point lies outside the certified region.
    OutsideRegion(String),
    /// Enumeration oracle refused the instance (too large or degenerate).
    OracleUnavailable(String),
    /// A scenario configuration failed validation; names the field.
    InvalidConfig(String),
    /// A diminishing-horizon schedule is malformed.
    InvalidSchedule(String),
    /// Two trajectories that must share shape/initial state do not.
    TrajectoryMismatch(String),
    /// A failure inside a closed-loop run, tagged with the step index.
    StepFailed { step: usize, source: Box<Error> },
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::NotStabilizable(msg) => write!(f, "pair is not stabilizable: {msg}"),
            Error::NotPositiveDefinite(msg) => write!(f, "matrix not positive definite: {msg}"),
            Error::IllConditioned { what, cond } => {
                write!(f, "{what} too ill-conditioned (cond ~ {cond:.3e})")
            }
            Error::DareDiverged { residual, iterations } => write!(
                f,
                "Riccati iteration did not converge after {iterations} steps (residual {residual:.3e})"
            ),
            Error::SolverStalled { residual, iterations } => write!(
                f,
                "solver hit its iteration cap ({iterations}) with residual {residual:.3e}"
            ),
            Error::BudgetBelowThreshold { budget, threshold } => write!(
                f,
                "iteration budget {budget} is below the certified threshold: \
                 increase the budget above {threshold:.3} (i.e. to at least {}), \
                 or set allow_uncertified to run anyway",
                threshold.ceil() as u64
            ),
            Error::CertificateInfeasible(msg) => write!(f, "certificate infeasible: {msg}"),
            Error::OutsideRegion(msg) => write!(f, "outside certified region: {msg}"),
            Error::OracleUnavailable(msg) => write!(f, "enumeration oracle unavailable: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidSchedule(msg) => write!(f, "invalid schedule: {msg}"),
            Error::TrajectoryMismatch(msg) => write!(f, "trajectory mismatch: {msg}"),
            Error::StepFailed { step, source } => write!(f, "at step {step}: {source}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    /// Process exit code the CLI maps this error to: 2 for refusals
    /// (certification or invalid input), 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetBelowThreshold { .. }
            | Error::CertificateInfeasible(_)
            | Error::OutsideRegion(_)
            | Error::NotStabilizable(_)
            | Error::NotPositiveDefinite(_)
            | Error::InvalidConfig(_)
            | Error::InvalidSchedule(_)
            | Error::TrajectoryMismatch(_)
            | Error::OracleUnavailable(_)
            | Error::Dimension(_) => 2,
            Error::IllConditioned { .. }
            | Error::DareDiverged { .. }
            | Error::SolverStalled { .. } => 3,
            Error::StepFailed { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Json(_) => 2,
        }
    }
}
