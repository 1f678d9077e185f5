//! Error type shared by every module.

use thiserror::Error;

/// Failures raised by the numerical routines.
///
/// Variants split into domain errors (the caller asked for something outside
/// the mathematical domain) and numerical failures (the algorithm could not
/// reach the requested accuracy). [`Error::is_domain`] tells them apart.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter lies outside its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A site index is not in `0..L^{dN}`.
    #[error("site index {index} out of range (site count {count})")]
    SiteOutOfRange { index: usize, count: usize },

    /// The lattice would exceed the dense-matrix size cap.
    #[error("lattice with {sites} sites exceeds the cap of {cap} sites")]
    SizeCap { sites: usize, cap: usize },

    /// A mass value makes a covariance or resolvent singular or indefinite.
    #[error("mass {a} is outside the admissible range: {reason}")]
    SingularMass { a: f64, reason: String },

    /// Adaptive quadrature ran out of subdivisions.
    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    /// Evaluation point too close to the pole of a negative-n profile.
    #[error("s = {s} is not above the pole s* = {s_star} of f_n for n = {n}")]
    PoleProximity { n: f64, s: f64, s_star: f64 },

    /// A bisection could not bracket a root.
    #[error("root not bracketed: {reason}")]
    Bracket { reason: String },

    /// The Bleher–Sinai search failed; `scale` is the first escaping scale.
    #[error("critical-point bracket failed: flow escapes the band at scale {scale}")]
    FlowEscape { scale: usize },

    /// The Monte Carlo step sampled outside the tabulated and extrapolated range.
    #[error("grid under-coverage at radius {radius} (grid limit {limit})")]
    GridUnderCoverage { radius: f64, limit: f64 },

    /// Too few effective samples in a Monte Carlo average.
    #[error("effective sample size {ess:.1} below {required:.1} at radius {radius}")]
    LowEffectiveSampleSize { ess: f64, required: f64, radius: f64 },

    /// The zero-mode weight does not decay on the available range.
    #[error("non-integrable zero-mode tail: exponent {exponent} at radius {radius}")]
    NonIntegrableTail { radius: f64, exponent: f64 },
}

impl Error {
    /// True for errors caused by out-of-domain inputs, false for numerical failures.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::SiteOutOfRange { .. }
                | Error::SizeCap { .. }
                | Error::SingularMass { .. }
                | Error::PoleProximity { .. }
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
