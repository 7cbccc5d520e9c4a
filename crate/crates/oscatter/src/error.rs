use thiserror::Error;

/// Crate-wide error type. Variants are named after the failure they report,
/// one per rejected precondition or aborted computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sigma = {0} outside the subcritical range (0, 1/4)")]
    InvalidSigma(f64),
    #[error("switch time T = {t} outside [pi/(2 omega), pi/omega) = [{lo}, {hi}) for omega = {omega}")]
    InvalidSwitchTime { t: f64, omega: f64, lo: f64, hi: f64 },
    #[error("grid axis {axis}: {reason}")]
    InvalidGrid { axis: usize, reason: String },
    #[error("translation by {requested} exceeds the box half-width {limit}")]
    ShiftTooLarge { requested: f64, limit: f64 },
    #[error("dilation by theta = {theta} pushes the state outside the box (support {support:.3}, limit {limit:.3})")]
    SupportEscapesBox { theta: f64, support: f64, limit: f64 },
    #[error("omega*t = {omega_t} lies within {guard} of a Mehler-singular time (pi/2)*k")]
    MehlerSingularTime { omega_t: f64, guard: f64 },
    #[error("step [{t0}, {t1}] crosses the regime boundary at |t| = {boundary}")]
    StepCrossesRegimeBoundary { t0: f64, t1: f64, boundary: f64 },
    #[error("free factorization requested at t = {t} inside the switch window |t| < {t_switch}")]
    InsideSwitchWindow { t: f64, t_switch: f64 },
    #[error("pair ({j}, {k}): decay exponent rho = {rho} does not clear the short-range threshold 1/(1-lambda) = {threshold}")]
    DecayTooSlow { j: usize, k: usize, rho: f64, threshold: f64 },
    #[error("direction lies in ker L_{j}{k} (|L w| = {magnitude:.3e})")]
    DirectionInKernel { j: usize, k: usize, magnitude: f64 },
    #[error("envelope Fourier mass {mass:.3e} outside the declared ball of radius {radius}")]
    SupportViolation { mass: f64, radius: f64 },
    #[error("wave operator not converged: {reason}")]
    NotConverged { reason: String },
    #[error("high-velocity extrapolation unstable: {reason}")]
    ExtrapolationUnstable { reason: String },
    #[error("time range {t_range} insufficient: estimated tail {tail:.3e} above tolerance {tol:.3e}")]
    TRangeInsufficient { t_range: f64, tail: f64, tol: f64 },
    #[error("sinogram incomplete: {missing} of {total} cells missing")]
    IncompleteSinogram { missing: usize, total: usize },
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("config validation failed [{invariant}]: {detail}")]
    ValidationError { invariant: String, detail: String },
    #[error("runs are not comparable: {0}")]
    IncomparableRuns(String),
    #[error("invalid mass: {0}")]
    InvalidMass(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("invalid probe: {0}")]
    InvalidProbe(String),
    #[error("state dump: {0}")]
    StateFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
