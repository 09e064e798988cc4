use num_complex::Complex64;

/// Errors surfaced by the torus calculus.
///
/// Numerical failures carry the diagnostic the caller needs to act on
/// (smallest singular value, offending evaluation point, achieved error).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("deformation matrices differ between operands")]
    ThetaMismatch,

    #[error("dimension {0} out of supported range 1..=4")]
    BadDimension(usize),

    #[error("matrix is not antisymmetric at entry ({0},{1})")]
    NotAntisymmetric(usize, usize),

    #[error("element is numerically singular (smallest singular value {sigma_min:.3e} <= tol {tol:.3e})")]
    SingularElement { sigma_min: f64, tol: f64 },

    #[error("truncated series did not converge within the tolerance budget (last term {last:.3e}, tol {tol:.3e})")]
    SeriesDivergence { last: f64, tol: f64 },

    #[error("leading symbol singular at xi = {xi:?}, lambda = {lambda}")]
    NonElliptic { xi: Vec<f64>, lambda: Complex64 },

    #[error("symbol component at degree {missing} required but not present (have {available} components)")]
    MissingComponent { missing: String, available: usize },

    #[error("contour quadrature did not converge: estimated error {estimate:.3e} above tol {tol:.3e}")]
    QuadratureNonConvergence { estimate: f64, tol: f64 },

    #[error("spectral range [{min:.3e}, {max:.3e}] not enclosed by contour (eps {eps:.3e}, radius {radius:.3e})")]
    ContourInvalid { min: f64, max: f64, eps: f64, radius: f64 },

    #[error("multiplier inverse only supported for pure left or pure right multipliers")]
    MixedMultiplierInverse,

    #[error("expression not evaluable: {0}")]
    Evaluation(String),

    #[error("canonical trace undefined for integer order {0} (not trace class)")]
    IntegerOrderTrace(f64),

    #[error("operation requires a differential symbol, got remainder order {0}")]
    NotDifferential(f64),

    #[error("truncation radius {k} too small for coefficient support {support}")]
    TruncationTooSmall { k: i32, support: i32 },

    #[error("sample at t = {t:.3e} outside trusted window: tail bound {tail:.3e} exceeds {limit:.3e}")]
    UntrustedSample { t: f64, tail: f64, limit: f64 },

    #[error("least squares system is rank deficient (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
