//! Smooth penalty functions and the composed form `Ψ(x) = Ψ̃(Lx)`.
//!
//! For `1 ≤ p ≤ 2` the non-smooth `(1/p)‖z‖_p^p` is replaced by the twice
//! continuously differentiable surrogate
//!
//! ```text
//! Ψ̃(z) = (1/p) Σ_i (z_i² + β)^{p/2},    β > 0,
//! ```
//!
//! whose gradient and Hessian are componentwise. The quadratic kind is exactly
//! `Ψ̃(z) = ½‖z‖²` with no smoothing parameter, so the general-form Tikhonov
//! identities `∇Ψ̃(z) = z` and `∇²Ψ̃(z) = I` hold bit-exactly.

use nalgebra::DVector;

use crate::error::Error;
use crate::linop::LinearOperator;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// `(1/p) Σ (z_i² + β)^{p/2}` with `p ∈ [1,2]`, `β > 0`.
    LpSmooth { p: f64, beta: f64 },
    /// `½‖z‖²`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothPenalty {
    kind: PenaltyKind,
}

impl SmoothPenalty {
    /// Smoothed `ℓp` penalty. `p` must lie in `[1, 2]` and `beta` must be positive.
    pub fn lp_smooth(p: f64, beta: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p must be in [1,2], got {p}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { kind: PenaltyKind::LpSmooth { p, beta } })
    }

    pub fn quadratic() -> Self {
        Self { kind: PenaltyKind::Quadratic }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, PenaltyKind::Quadratic)
    }
}

/// `Ψ̃(z)`.
pub fn psi_value(pen: &SmoothPenalty, z: &DVector<f64>) -> f64 {
    match pen.kind {
        PenaltyKind::Quadratic => 0.5 * z.norm_squared(),
        PenaltyKind::LpSmooth { p, beta } => {
            z.iter().map(|&zi| (zi * zi + beta).powf(0.5 * p)).sum::<f64>() / p
        }
    }
}

/// `∇Ψ̃(z)`, componentwise `z_i (z_i² + β)^{p/2 − 1}` (or `z` for the quadratic kind).
pub fn psi_gradient(pen: &SmoothPenalty, z: &DVector<f64>) -> DVector<f64> {
    match pen.kind {
        PenaltyKind::Quadratic => z.clone(),
        PenaltyKind::LpSmooth { p, beta } => {
            DVector::from_fn(z.len(), |i, _| {
                let zi = z[i];
                zi * (zi * zi + beta).powf(0.5 * p - 1.0)
            })
        }
    }
}

/// Diagonal of `∇²Ψ̃(z)`: `(z_i²+β)^{p/2−1} + 2(p/2−1) z_i² (z_i²+β)^{p/2−2}`,
/// strictly positive for every finite `z`; all ones for the quadratic kind.
pub fn psi_hessian_diag(pen: &SmoothPenalty, z: &DVector<f64>) -> DVector<f64> {
    match pen.kind {
        PenaltyKind::Quadratic => DVector::from_element(z.len(), 1.0),
        PenaltyKind::LpSmooth { p, beta } => {
            DVector::from_fn(z.len(), |i, _| {
                let s = z[i] * z[i];
                (s + beta).powf(0.5 * p - 1.0) + 2.0 * (0.5 * p - 1.0) * s * (s + beta).powf(0.5 * p - 2.0)
            })
        }
    }
}

/// Chain-rule gradient of the composed penalty, `∇(Ψ̃∘L)(x) = Lᵀ ∇Ψ̃(Lx)`.
/// Costs exactly one forward and one adjoint application of `L`.
pub fn composed_gradient(
    pen: &SmoothPenalty,
    l: &LinearOperator,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let z = l.apply(x)?;
    l.apply_adjoint(&psi_gradient(pen, &z))
}
