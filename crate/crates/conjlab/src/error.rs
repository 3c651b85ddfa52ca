use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("linear step A(t={t}) is singular")]
    SingularStep { t: i64 },

    #[error("time {t} outside window [{t_min}, {t_max}]")]
    OutsideWindow { t: i64, t_min: i64, t_max: i64 },

    #[error("backward step at t={t} is not a contraction: measured L*||A^-1|| = {product}")]
    ContractionViolated { t: i64, product: f64 },

    #[error("fixed-point iteration did not converge: q = {q}, residual = {residual} after {iterations} iterations")]
    NonConvergence {
        q: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("no contractive growth certificate on window: spectral radius estimate {rho}")]
    NoGrowthCertificate { rho: f64 },

    #[error("hypothesis `{name}` violated: {detail}")]
    HypothesisFailed { name: String, detail: String },

    #[error("non-finite value in {context} at sample {sample}")]
    NonFinite { context: String, sample: String },

    #[error("norm weight at (t={t}) is not symmetric positive definite")]
    NotSpd { t: i64 },

    #[error("cut-off refused: difference quotient of F does not vanish at the origin (quotient {quotient} at radius {radius})")]
    QuotientDoesNotVanish { quotient: f64, radius: f64 },

    #[error("adapted norm tail bound {tail} not achievable within horizon cap {cap}")]
    TailBound { tail: f64, cap: usize },

    #[error("spectrum averages not converged: drift {drift} exceeds 5x half-width {half_width}; increase n_steps")]
    SpectrumNotConverged { drift: f64, half_width: f64 },

    #[error("shift system violates stationarity: residual {residual} at witness (t={t}, x={x})")]
    NotShiftStationary { residual: f64, t: i64, x: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
