//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pair distance {r} is not positive (pair {i}, {j})")]
    CoincidentParticles { i: usize, j: usize, r: f64 },

    #[error("integrator failure at step {step}: {detail}")]
    Integrator { step: usize, detail: String },

    #[error("invalid phase grid: {0}")]
    Grid(String),

    #[error("density not normalized: |N(f) - 1| = {defect:.3e}")]
    NotNormalized { defect: f64 },

    #[error("{lost_fraction:.3e} of the mass fell outside the grid (limit {limit:.1e})")]
    MassOutsideGrid { lost_fraction: f64, limit: f64 },

    #[error("momentum grid too narrow: needs half-width >= {required:.4}, has {available:.4}")]
    MomentumGridTooNarrow { required: f64, available: f64 },

    #[error("casimir integrand failed at cell value {value}: {detail}")]
    CasimirEval { value: f64, detail: String },

    #[error("exact transport instance too large ({size} > {cap}); use the entropic solver")]
    TransportSizeCap { size: usize, cap: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal residual {residual:.3e})")]
    SinkhornNonConvergence { iterations: usize, residual: f64 },

    #[error("invalid discrete measure: {0}")]
    Measure(String),

    #[error("fixed-point map diverged: {0}")]
    FixedPointDiverged(String),

    #[error(
        "fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations"
    )]
    FixedPointNonConvergence {
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("no temperature bracket for energy {epsilon}: {detail}")]
    InfeasibleEnergy { epsilon: f64, detail: String },

    #[error("outer multiplier solve failed: {0}")]
    MultiplierSolve(String),

    #[error("centrifugal term dominates confinement at |omega| = {omega}: {detail}")]
    CentrifugalLimit { omega: f64, detail: String },

    #[error("boundary mass {boundary_mass:.3e} exceeds limit {limit:.1e}; enlarge the domain")]
    DomainTooSmall { boundary_mass: f64, limit: f64 },

    #[error(
        "potential '{id}' fails mean-field hypotheses ({missing}); refusing mean-field operation"
    )]
    HypothesesNotMet { id: String, missing: String },

    #[error("energy {energy} below reachable minimum (~{minimum:.6}) for this configuration")]
    EnergyTooLow { energy: f64, minimum: f64 },

    #[error("sampler acceptance {acceptance:.4} below 1%; adjust the proposal step")]
    StepSizeAdvisory { acceptance: f64 },

    #[error("infeasible ensemble constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("config validation failed:\n{}", errors.join("\n"))]
    ConfigInvalid { errors: Vec<String> },

    #[error("unsupported dimension {0} (supported: 2, 3)")]
    Dimension(usize),

    #[error("bad density file: {0}")]
    DensityFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
