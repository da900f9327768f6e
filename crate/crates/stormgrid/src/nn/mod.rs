//! Minimal dense numerics for the forecasting network: a row-major f64
//! matrix type and a tape-based reverse-mode differentiation engine
//! ([`tape::Tape`]) covering exactly the operations the model needs.

mod tape;
mod tensor;

pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
}

/// Gaussian error linear unit, exact form `x * Phi(x)` with the standard
/// normal CDF evaluated through `erf`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu_scalar(0.0), 0.0);
    }

    #[test]
    fn gelu_at_one_matches_normal_cdf_oracle() {
        assert!((gelu_scalar(1.0) - 0.84134474606854295).abs() < 1e-9);
    }

    #[test]
    fn gelu_approaches_identity() {
        let d = gelu_scalar(10.0) - 10.0;
        assert!(d <= 0.0 && d > -1e-9, "got {d}");
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        let eps = 1e-6;
        for &x in &[-2.0, -0.7, 0.0, 0.3, 1.5] {
            let fd = (gelu_scalar(x + eps) - gelu_scalar(x - eps)) / (2.0 * eps);
            let an = gelu_grad_scalar(x);
            assert!((fd - an).abs() < 1e-8, "x={x}: fd={fd} analytic={an}");
        }
    }
}
