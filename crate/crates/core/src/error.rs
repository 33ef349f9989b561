use std::path::PathBuf;

use crate::identification::FitReport;
use crate::trajectory::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("flux {alpha:e} Wb outside the operating range |alpha| < {limit:e} Wb")]
    FluxOutOfRange { alpha: f64, limit: f64 },

    #[error("position reverses direction near t = {t:e} s (by {amount:e} m over {duration:e} s)")]
    MonotonicityViolation { t: f64, amount: f64, duration: f64 },

    #[error("contact probability {0:e} is too small to condition on")]
    ZeroContactProbability(f64),

    #[error("degenerate regularization: quadratic control coefficient is {0:e}")]
    DegenerateRegularization(f64),

    #[error("infeasible voltage bounds: lower {lower} V >= upper {upper} V")]
    InfeasibleBounds { lower: f64, upper: f64 },

    #[error("boundary value solver did not converge{}: {reason} (residual {residual:e})",
        stage.map(|s| format!(" at continuation stage {s}")).unwrap_or_default())]
    NoConvergence {
        stage: Option<usize>,
        reason: String,
        residual: f64,
        last: Option<Box<Trajectory>>,
    },

    #[error("mesh limit exceeded: {needed} nodes requested, limit {limit}")]
    MeshLimitExceeded { needed: usize, limit: usize },

    #[error("armature never reached the contact position {z_c:e} m")]
    EventNotBracketed { z_c: f64 },

    #[error("none of the {0} Monte Carlo samples made contact")]
    AllSamplesMissedContact(usize),

    #[error("flux linkage drift {value:e} Wb-turns exceeds bound {bound:e}")]
    DriftExceeded { value: f64, bound: f64 },

    #[error("simulation failure: {0}")]
    SimulationFailure(String),

    #[error("optimizer budget exhausted after {} evaluations (best cost {:e})", .0.evaluations, .0.final_cost)]
    BudgetExhausted(Box<FitReport>),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
