use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights have zero total mass")]
    ZeroMass,

    #[error("initial density vanishes at every sampled point")]
    InitializationFailure,

    #[error("at least {needed} particles are required for {context}, got {got}")]
    InsufficientParticles {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    /// Some entry of exp(-C/2eps) is exactly zero. The ratio is max C/(2 eps).
    #[error("Gibbs kernel underflow: max C/(2 eps) = {max_ratio:.6e}; raise epsilon or shrink the step")]
    KernelUnderflow { max_ratio: f64 },

    #[error("exp(-beta psi - 1) overflows at index {index} (psi = {psi})")]
    XiOverflow { index: usize, psi: f64 },

    #[error("zero denominator in {context} at index {index}")]
    ZeroDenominator { context: &'static str, index: usize },

    #[error("non-finite drift at particle {particle}")]
    NonFiniteDrift { particle: usize },

    #[error("singular evaluation: {0}")]
    Singularity(&'static str),

    #[error("Feller condition 2a > b^2 > 0, theta > 0 violated (a = {a}, b = {b}, theta = {theta})")]
    FellerViolated { a: f64, b: f64, theta: f64 },

    #[error("support violation: q[{index}] = 0 while p[{index}] > 0")]
    SupportViolation { index: usize },

    #[error("invalid Jacobian {value} at index {index}")]
    InvalidJacobian { index: usize, value: f64 },

    #[error("argument {x} outside the power-series range of the Bessel evaluator")]
    BesselRange { x: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
