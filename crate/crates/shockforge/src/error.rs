use thiserror::Error;

/// Unified error type for all pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-strict hyperbolicity: eigenvalue gap {gap:.3e} <= tol {tol:.3e} at state {state:?}")]
    NonStrictHyperbolicity { gap: f64, tol: f64, state: Vec<f64> },

    #[error("state left the chart validity box: |u| = {norm:.3e} > {bound:.3e}")]
    OutOfBox { norm: f64, bound: f64 },

    #[error("normal-form construction singular: condition number {cond:.3e}")]
    SingularConstruction { cond: f64 },

    #[error("no gradient blowup: min steepening rate {min_rate:.3e} >= 0")]
    NoBlowup { min_rate: f64 },

    #[error("degenerate steepening minimum: {reason}")]
    DegenerateMinimum { reason: String },

    #[error("characteristics cross before handoff time {t0} (min K = {min_k:.3e} at t = {t:.6})")]
    EarlyCrossing { t0: f64, t: f64, min_k: f64 },

    #[error("time step failure at t = {t:.6}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("characteristic trace left the padded y-range at y = {y:.6}, t = {t:.6}")]
    BoundaryDataGap { y: f64, t: f64 },

    #[error("query ({x:.6}, {t:.6}) outside the solved domain")]
    OutOfDomain { x: f64, t: f64 },

    #[error("min_y K never crosses zero on the solved range (min {min_k:.3e})")]
    NoCrossing { min_k: f64 },

    #[error("degenerate cusp at ({y:.6}, {t:.6}): d3_phi = {d3:.3e}, d2yt_phi = {d2yt:.3e}")]
    DegenerateCusp { y: f64, t: f64, d3: f64, d2yt: f64 },

    #[error("envelope continuation stalled at t = {t:.6}")]
    BranchLoss { t: f64 },

    #[error("pre-shock iterate left the cusp interior at t = {t:.6}")]
    LeftCuspInterior { t: f64 },

    #[error("sampled anisotropic distance spans only {decades:.2} decades (< {needed})")]
    InsufficientRange { decades: f64, needed: f64 },

    #[error("Rankine-Hugoniot Newton diverged: residual {residual:.3e} after {iters} iterations")]
    NewtonDivergence { residual: f64, iters: usize },

    #[error("entropy condition violated by {margin:.3e} at t = {t:.6}")]
    EntropyViolation { t: f64, margin: f64 },

    #[error("transport foot z = {z:.6} outside domain [{lo:.6}, {hi:.6}] at t = {t:.6}")]
    FootOutOfDomain { z: f64, lo: f64, hi: f64, t: f64 },

    #[error("Picard iteration not contracting (ratios {ratios:?}) at eps = {eps}, {nodes} nodes")]
    NoContraction { ratios: Vec<f64>, eps: f64, nodes: usize },

    #[error("i-jump below noise floor: max |[w_i]| = {max_jump:.3e}")]
    InsufficientJump { max_jump: f64 },

    #[error("CFL violation: wave speed {speed:.3e} needs dt < {dt_max:.3e}, have {dt:.3e}")]
    CflViolation { speed: f64, dt_max: f64, dt: f64 },

    #[error("pipeline artifacts incomplete: missing {missing}")]
    IncompletePipeline { missing: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
