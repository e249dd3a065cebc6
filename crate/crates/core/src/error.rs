use thiserror::Error;

pub type Result<T> = std::result::Result<T, HzdError>;

#[derive(Debug, Error)]
pub enum HzdError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid gait: {0}")]
    InvalidGait(String),

    #[error("numerical singularity: {0}")]
    NumericalSingularity(String),

    #[error("degenerate impact: {0}")]
    DegenerateImpact(String),

    /// Not enough momentum to finish the step.
    #[error("step failure at alpha = {alpha:.6}: {reason}")]
    StepFailure { alpha: f64, reason: String },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("gait design failed: {0}")]
    GaitDesign(String),

    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("no limit cycle: {0}")]
    NoLimitCycle(String),

    #[error("fit quality: {0}")]
    FitQuality(String),

    #[error("optimization infeasible, binding constraint: {constraint}")]
    OptimizationInfeasible { constraint: String },

    #[error("constraint violated: {constraint}")]
    ConstraintViolation { constraint: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HzdError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HzdError::GaitDesign(_)
            | HzdError::InfeasibleSchedule(_)
            | HzdError::OptimizationInfeasible { .. }
            | HzdError::ConstraintViolation { .. }
            | HzdError::StepFailure { .. }
            | HzdError::InvalidGait(_) => 2,
            HzdError::Config(_) | HzdError::Io(_) | HzdError::Json(_) | HzdError::InvalidParams(_) => 64,
            _ => 3,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            HzdError::InvalidState(_) => "invalid-state",
            HzdError::InvalidParams(_) => "invalid-params",
            HzdError::InvalidGait(_) => "invalid-gait",
            HzdError::NumericalSingularity(_) => "numerical-singularity",
            HzdError::DegenerateImpact(_) => "degenerate-impact",
            HzdError::StepFailure { .. } => "step-failure",
            HzdError::Divergence(_) => "divergence",
            HzdError::GaitDesign(_) => "gait-design-failure",
            HzdError::InfeasibleSchedule(_) => "infeasible-schedule",
            HzdError::NoLimitCycle(_) => "no-limit-cycle",
            HzdError::FitQuality(_) => "fit-quality",
            HzdError::OptimizationInfeasible { .. } => "optimization-infeasible",
            HzdError::ConstraintViolation { .. } => "constraint-violation",
            HzdError::Config(_) => "config",
            HzdError::Io(_) => "io",
            HzdError::Json(_) => "json",
        }
    }
}
