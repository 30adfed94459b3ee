use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field does not match grid: expected {expected} nodes, got {got}")]
    FieldMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("degree {m} out of range for vector of length {n}")]
    DegreeOutOfRange { m: usize, n: usize },

    /// Strict convexity lost: the tensor is not positive definite somewhere.
    #[error("tensor leaves the positive cone at node {node} (smallest eigenvalue {lambda_min:e})")]
    NotInCone { node: usize, lambda_min: f64 },

    #[error("iterate left the admissible cone at t = {t} and backtracking failed")]
    ConeExit { t: f64 },

    #[error("continuation exceeded {steps} steps (reached t = {t})")]
    MaxStepsExceeded { steps: usize, t: f64 },

    #[error("linear solve failed: relative residual {residual:e} after {iterations} iterations")]
    LinearSolveFailure { iterations: usize, residual: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("p = {p} lies outside the existence regime 1 < p < k+1 = {upper}; pass force to solve anyway")]
    OutsideGuaranteeRegime { p: f64, upper: f64 },

    #[error("homotopy stalled at t = {t}: step {dt:e} below minimum")]
    HomotopyStalled { t: f64, dt: f64 },

    #[error("gamma = {gamma} outside the admissible range (0, {upper})")]
    GammaOutOfRange { gamma: f64, upper: f64 },

    #[error("lemma violated: {0}")]
    LemmaViolated(String),

    #[error("input is not strictly convex (margin {margin:e})")]
    NotConvex { margin: f64 },

    #[error("input is not even (defect {defect:e})")]
    NotEven { defect: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format version {found} (this build reads major version {supported})")]
    UnsupportedVersion { found: String, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
