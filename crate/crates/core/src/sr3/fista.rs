//! Accelerated proximal gradient (FISTA) on the original problem
//! `min ½‖Ax − b‖² + R(x)` with an identity regularization operator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::gap::{ball_certificate, lasso_gap};
use super::SolveResult;
use crate::error::{check_len, Error, Result};
use crate::linops::LinearOperator;
use crate::prox::{prox_apply, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FistaOptions {
    /// Gradient step; `None` uses `1/‖A‖²` from a power-iteration estimate.
    pub step: Option<f64>,
    pub max_iter: usize,
    /// Stop once the monitored duality gap is at most this value.
    pub gap_tol: f64,
    /// Gradient-based adaptive restart of the momentum.
    pub restart: bool,
}

impl Default for FistaOptions {
    fn default() -> Self {
        Self {
            step: None,
            max_iter: 100_000,
            gap_tol: 1e-8,
            restart: true,
        }
    }
}

/// Power-iteration estimate of `1/‖A‖²` with a small safety margin.
pub fn default_step(op: &LinearOperator) -> f64 {
    let norm = op.norm_estimate(100) * 1.02;
    if norm == 0.0 {
        1.0
    } else {
        1.0 / (norm * norm)
    }
}

struct Monitor {
    residual: f64,
    gap: f64,
}

fn monitor(op: &LinearOperator, b: &DVector<f64>, reg: &Regularizer, x: &DVector<f64>) -> Result<Monitor> {
    let r = b - op.apply(x)?;
    let residual = r.norm();
    let gap = match *reg {
        Regularizer::L1Ball { tau } => ball_certificate(op, b, tau, x)?.gap(),
        Regularizer::L1Penalty { lambda } => {
            let atr = op.apply_adjoint(&r)?.amax();
            lasso_gap(b, &r, atr, x, lambda)
        }
        Regularizer::None => op.apply_adjoint(&r)?.norm(),
    };
    Ok(Monitor { residual, gap })
}

/// FISTA from `x₀ = 0`. One iteration is one gradient step (one apply of `A`
/// and one of `Aᵀ`); gap monitoring is not counted.
pub fn fista_solve(op: &LinearOperator, b: &DVector<f64>, reg: &Regularizer, options: &FistaOptions) -> Result<SolveResult> {
    check_len("fista: b", op.rows(), b.len())?;
    reg.validate()?;
    let step = match options.step {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("FISTA step must be positive, got {s}"))),
        None => default_step(op),
    };
    if options.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }

    let n = op.cols();
    let mut x = DVector::zeros(n);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut result = SolveResult::empty(n);

    let m0 = monitor(op, b, reg, &x)?;
    if m0.gap <= options.gap_tol {
        result.converged = true;
        result.residual_history.push(m0.residual);
        result.gap_history.push(m0.gap);
        result.objective_history.push(0.5 * m0.residual * m0.residual + reg.value(&x));
        return Ok(result);
    }

    for _ in 0..options.max_iter {
        let grad = op.apply_adjoint(&(op.apply(&z)? - b))?;
        let x_next = prox_apply(reg, &(&z - grad * step), step)?;

        let m = monitor(op, b, reg, &x_next)?;
        result.outer_iterations += 1;
        result.inner_iterations.push(1);
        result.residual_history.push(m.residual);
        result.gap_history.push(m.gap);
        result.objective_history.push(0.5 * m.residual * m.residual + reg.value(&x_next));

        let momentum_fights_descent = (&z - &x_next).dot(&(&x_next - &x)) > 0.0;
        if options.restart && momentum_fights_descent {
            t = 1.0;
            z = x_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = x_next;
        if m.gap <= options.gap_tol {
            result.converged = true;
            break;
        }
    }
    result.y = x.clone();
    result.x = x;
    Ok(result)
}
