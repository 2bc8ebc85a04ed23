//! Duality gaps and value-function bounds used to monitor the solvers.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::linops::LinearOperator;

/// Relative slack allowed on `‖y‖₁ ≤ τ` before a point counts as infeasible.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

pub(crate) fn check_feasible(y: &DVector<f64>, tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let norm = y.lp_norm(1);
    if norm > tau * (1.0 + FEASIBILITY_SLACK) + f64::MIN_POSITIVE {
        return Err(Error::Infeasible { norm, tau });
    }
    Ok(())
}

/// Bounds on `φ(τ) = min ‖Ax − b‖₂ s.t. ‖x‖₁ ≤ τ` certified by a feasible `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallCertificate {
    pub residual_norm: f64,
    pub lower: f64,
    pub upper: f64,
    /// `−‖Aᵀr‖∞ / ‖r‖₂`, zero when `r = 0`.
    pub derivative: f64,
}

impl BallCertificate {
    pub fn gap(&self) -> f64 {
        (self.upper - self.lower).max(0.0)
    }
}

pub(crate) fn ball_certificate(op: &LinearOperator, b: &DVector<f64>, tau: f64, y: &DVector<f64>) -> Result<BallCertificate> {
    check_len("duality gap: b", op.rows(), b.len())?;
    check_len("duality gap: y", op.cols(), y.len())?;
    check_feasible(y, tau)?;
    let r = b - op.apply(y)?;
    let rn = r.norm();
    if rn == 0.0 {
        return Ok(BallCertificate {
            residual_norm: 0.0,
            lower: 0.0,
            upper: 0.0,
            derivative: 0.0,
        });
    }
    let atr = op.apply_adjoint(&r)?.amax();
    let lower = (b.dot(&r) - tau * atr) / rn;
    Ok(BallCertificate {
        residual_norm: rn,
        lower: lower.min(rn),
        upper: rn,
        derivative: -atr / rn,
    })
}

/// `‖r‖₂ − (bᵀr − τ‖Aᵀr‖∞)/‖r‖₂` with `r = b − Ay`, clamped at zero.
pub fn duality_gap(op: &LinearOperator, b: &DVector<f64>, tau: f64, y: &DVector<f64>) -> Result<f64> {
    Ok(ball_certificate(op, b, tau, y)?.gap())
}

/// Bounds on the relaxed value function at a feasible `y`, given the inner
/// minimizer `x = argmin ‖Ax − b‖² + κ‖Lx − y‖²`.
///
/// With `r = [Ax − b; √κ(Lx − y)]` the relaxed residual satisfies
/// `‖r‖² = ‖F y − g‖²` and `Fᵀ(g − F y) = κ(Lx − y)`, so no explicit `F` is needed.
pub(crate) fn relaxed_certificate(ax_minus_b: &DVector<f64>, lx_minus_y: &DVector<f64>, y: &DVector<f64>, kappa: f64, tau: f64) -> BallCertificate {
    let rn = (ax_minus_b.norm_squared() + kappa * lx_minus_y.norm_squared()).sqrt();
    if rn == 0.0 {
        return BallCertificate {
            residual_norm: 0.0,
            lower: 0.0,
            upper: 0.0,
            derivative: 0.0,
        };
    }
    let dual_inf = kappa * lx_minus_y.amax();
    let lower = (rn * rn + kappa * y.dot(lx_minus_y) - tau * dual_inf) / rn;
    BallCertificate {
        residual_norm: rn,
        lower: lower.min(rn),
        upper: rn,
        derivative: -dual_inf / rn,
    }
}

/// Primal-dual gap of `½‖Ax − b‖² + λ‖x‖₁` with the scaled-residual dual point.
pub(crate) fn lasso_gap(b: &DVector<f64>, r: &DVector<f64>, atr_inf: f64, x: &DVector<f64>, lambda: f64) -> f64 {
    let primal = 0.5 * r.norm_squared() + lambda * x.lp_norm(1);
    let scale = if atr_inf > lambda { lambda / atr_inf } else { 1.0 };
    let theta = r * scale;
    let dual = 0.5 * b.norm_squared() - 0.5 * (b - theta).norm_squared();
    (primal - dual).max(0.0)
}
