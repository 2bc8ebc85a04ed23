//! LSQR (Paige & Saunders) on Golub–Kahan bidiagonalization.
//!
//! Warm starts shift the right-hand side: given `x0` the solver works on the
//! correction system `min ‖Op Δ - (rhs - Op x0)‖` and returns `x0 + Δ`.
//! A visitor can observe every iterate and stop the solve early without the
//! bidiagonalization ever being restarted.

use std::ops::ControlFlow;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linops::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqrOptions {
    /// Stop when `‖Opᵀr‖ / (‖Op‖‖r‖) ≤ atol` or `‖r‖ ≤ atol (‖rhs‖ + ‖Op‖‖x‖)`.
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        Self {
            atol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl LsqrOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol >= 0.0) {
            return Err(Error::InvalidArgument(format!("atol must be >= 0, got {}", self.atol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Atol,
    MaxIter,
    Callback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqrStats {
    pub iterations: usize,
    /// Recurrence estimate of `‖rhs - Op x‖`.
    pub final_residual_norm: f64,
    /// Recurrence estimate of `‖Opᵀ(rhs - Op x)‖`.
    pub final_normal_residual_norm: f64,
    pub stop_reason: StopReason,
}

/// Cold-start LSQR.
pub fn lsqr_solve(op: &LinearOperator, rhs: &DVector<f64>, options: &LsqrOptions) -> Result<(DVector<f64>, LsqrStats)> {
    lsqr_run(op, rhs, None, options, None)
}

/// LSQR on the correction system around `x0`.
pub fn lsqr_solve_shifted(
    op: &LinearOperator,
    rhs: &DVector<f64>,
    x0: &DVector<f64>,
    options: &LsqrOptions,
) -> Result<(DVector<f64>, LsqrStats)> {
    lsqr_run(op, rhs, Some(x0), options, None)
}

/// LSQR with a per-iteration visitor receiving `(iteration, x0 + Δ_l)`.
/// Returning `ControlFlow::Break` ends the solve at that iterate.
pub fn lsqr_solve_with<F>(
    op: &LinearOperator,
    rhs: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    options: &LsqrOptions,
    mut visitor: F,
) -> Result<(DVector<f64>, LsqrStats)>
where
    F: FnMut(usize, &DVector<f64>) -> ControlFlow<()>,
{
    lsqr_run(op, rhs, x0, options, Some(&mut visitor))
}

type Visitor<'a> = &'a mut dyn FnMut(usize, &DVector<f64>) -> ControlFlow<()>;

fn lsqr_run(
    op: &LinearOperator,
    rhs: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    options: &LsqrOptions,
    mut visitor: Option<Visitor<'_>>,
) -> Result<(DVector<f64>, LsqrStats)> {
    options.validate()?;
    let (m, n) = op.shape();
    check_len("lsqr rhs", m, rhs.len())?;
    if let Some(x0) = x0 {
        check_len("lsqr x0", n, x0.len())?;
    }

    let base = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut u = match x0 {
        Some(x0) => rhs - op.apply(x0)?,
        None => rhs.clone(),
    };
    let bnorm = rhs.norm();
    let mut beta = u.norm();
    let done = |iterations, rnorm, arnorm| LsqrStats {
        iterations,
        final_residual_norm: rnorm,
        final_normal_residual_norm: arnorm,
        stop_reason: StopReason::Atol,
    };
    if beta == 0.0 {
        return Ok((base, done(0, 0.0, 0.0)));
    }
    u /= beta;
    let mut v = DVector::zeros(n);
    op.adjoint_into(u.as_slice(), v.as_mut_slice());
    let mut alpha = v.norm();
    if alpha == 0.0 {
        return Ok((base, done(0, beta, 0.0)));
    }
    v /= alpha;

    let mut w = v.clone();
    let mut dx = DVector::zeros(n);
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm_sq = 0.0;
    let mut rnorm = beta;
    let mut arnorm = alpha * beta;
    let mut scratch_m = DVector::zeros(m);
    let mut scratch_n = DVector::zeros(n);

    for itn in 1..=options.max_iter {
        // u ← Op v - α u
        op.apply_into(v.as_slice(), scratch_m.as_mut_slice());
        u.axpy(1.0, &scratch_m, -alpha);
        beta = u.norm();
        anorm_sq += alpha * alpha + beta * beta;
        if beta > 0.0 {
            u /= beta;
            // v ← Opᵀ u - β v
            op.adjoint_into(u.as_slice(), scratch_n.as_mut_slice());
            v.axpy(1.0, &scratch_n, -beta);
            alpha = v.norm();
            if alpha > 0.0 {
                v /= alpha;
            }
        } else {
            alpha = 0.0;
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        dx.axpy(phi / rho, &w, 1.0);
        w.axpy(1.0, &v, -theta / rho);

        rnorm = phibar;
        arnorm = phibar * alpha * c.abs();
        let anorm = anorm_sq.sqrt();

        if let Some(visit) = visitor.as_mut() {
            let x = &base + &dx;
            if visit(itn, &x).is_break() {
                return Ok((
                    x,
                    LsqrStats {
                        iterations: itn,
                        final_residual_norm: rnorm,
                        final_normal_residual_norm: arnorm,
                        stop_reason: StopReason::Callback,
                    },
                ));
            }
        }

        let consistent = rnorm <= options.atol * (bnorm + anorm * (&base + &dx).norm());
        let normal = rnorm == 0.0 || arnorm <= options.atol * anorm * rnorm;
        if consistent || normal {
            return Ok((&base + dx, done(itn, rnorm, arnorm)));
        }
        if itn == options.max_iter {
            break;
        }
    }
    Ok((
        &base + dx,
        LsqrStats {
            iterations: options.max_iter,
            final_residual_norm: rnorm,
            final_normal_residual_norm: arnorm,
            stop_reason: StopReason::MaxIter,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{make_diff_1d, make_gaussian_random};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn dense_ls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let ata = a.transpose() * a;
        ata.cholesky().unwrap().solve(&(a.transpose() * b))
    }

    fn tight() -> LsqrOptions {
        LsqrOptions {
            atol: 1e-14,
            max_iter: 500,
        }
    }

    #[test]
    fn identity_converges_in_one_step() {
        let id = LinearOperator::identity(5);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0]);
        let (x, stats) = lsqr_solve(&id, &b, &LsqrOptions::default()).unwrap();
        assert_eq!(stats.iterations, 1);
        assert!((x - b).norm() < 1e-14);
    }

    #[test]
    fn zero_rhs_returns_zero_immediately() {
        let a = make_gaussian_random(6, 4, 1).unwrap();
        let (x, stats) = lsqr_solve(&a, &DVector::zeros(6), &LsqrOptions::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert_eq!(x, DVector::zeros(4));
    }

    #[test]
    fn matches_dense_normal_equations() {
        let a = make_gaussian_random(20, 10, 3).unwrap();
        let b = DVector::from_fn(20, |i, _| (i as f64).sin() + 0.3);
        let (x, stats) = lsqr_solve(&a, &b, &tight()).unwrap();
        let reference = dense_ls(&a.to_dense(), &b);
        assert!((&x - &reference).norm() <= 1e-8 * reference.norm(), "{stats:?}");
    }

    #[test]
    fn dimension_mismatch() {
        let a = make_gaussian_random(5, 3, 1).unwrap();
        assert!(lsqr_solve(&a, &DVector::zeros(4), &LsqrOptions::default()).is_err());
        assert!(lsqr_solve_shifted(&a, &DVector::zeros(5), &DVector::zeros(2), &LsqrOptions::default()).is_err());
        let bad = LsqrOptions { atol: 1e-6, max_iter: 0 };
        assert!(lsqr_solve(&a, &DVector::zeros(5), &bad).is_err());
    }

    #[test]
    fn warm_start_at_solution_is_stationary() {
        let a = make_gaussian_random(30, 15, 4).unwrap();
        let b = DVector::from_fn(30, |i, _| (0.7 * i as f64).cos());
        let exact = dense_ls(&a.to_dense(), &b);
        let (x, stats) = lsqr_solve_shifted(&a, &b, &exact, &LsqrOptions::default()).unwrap();
        assert!(stats.iterations <= 1);
        assert!((&x - &exact).norm() <= 1e-10);
    }

    #[test]
    fn warm_start_from_zero_equals_cold_start() {
        let a = make_gaussian_random(12, 6, 5).unwrap();
        let b = DVector::from_fn(12, |i, _| i as f64 - 4.0);
        let (cold, cs) = lsqr_solve(&a, &b, &tight()).unwrap();
        let (warm, ws) = lsqr_solve_shifted(&a, &b, &DVector::zeros(6), &tight()).unwrap();
        assert_eq!(cs.iterations, ws.iterations);
        assert!((cold - warm).norm() < 1e-14);
    }

    #[test]
    fn warm_start_near_solution_saves_iterations() {
        let a = make_gaussian_random(30, 15, 6).unwrap();
        let b = DVector::from_fn(30, |i, _| 1.0 + (i % 4) as f64);
        let exact = dense_ls(&a.to_dense(), &b);
        let perturbed = exact.map(|x| x * (1.0 + 1e-4));
        let opts = LsqrOptions { atol: 1e-10, max_iter: 200 };
        let (_, cold) = lsqr_solve(&a, &b, &opts).unwrap();
        let (x, warm) = lsqr_solve_shifted(&a, &b, &perturbed, &opts).unwrap();
        assert!(warm.iterations < cold.iterations, "warm {} cold {}", warm.iterations, cold.iterations);
        assert!((x - exact).norm() < 1e-8);
    }

    #[test]
    fn residuals_nonincreasing_and_visitor_counts_up() {
        let a = make_gaussian_random(25, 12, 7).unwrap();
        let b = DVector::from_fn(25, |i, _| (i as f64 * 0.37).sin());
        let mut seen = Vec::new();
        let mut residuals = Vec::new();
        lsqr_solve_with(&a, &b, None, &tight(), |itn, x| {
            seen.push(itn);
            residuals.push((&b - a.apply(x).unwrap()).norm());
            ControlFlow::Continue(())
        })
        .unwrap();
        assert!(seen.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(seen[0], 1);
        for w in residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
    }

    #[test]
    fn visitor_can_stop() {
        let a = make_gaussian_random(25, 12, 8).unwrap();
        let b = DVector::from_element(25, 1.0);
        let (_, stats) = lsqr_solve_with(&a, &b, None, &tight(), |itn, _| {
            if itn == 3 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(stats.iterations, 3);
        assert_eq!(stats.stop_reason, StopReason::Callback);
    }

    #[test]
    fn max_iter_respected() {
        let a = make_gaussian_random(40, 30, 9).unwrap();
        let b = DVector::from_element(40, 1.0);
        let (_, stats) = lsqr_solve(&a, &b, &LsqrOptions { atol: 0.0, max_iter: 4 }).unwrap();
        assert_eq!(stats.iterations, 4);
        assert_eq!(stats.stop_reason, StopReason::MaxIter);
    }

    #[test]
    fn stacked_system_matches_regularized_normal_equations() {
        let a = Arc::new(make_gaussian_random(9, 7, 10).unwrap());
        let l = Arc::new(make_diff_1d(7).unwrap());
        let kappa: f64 = 3.0;
        let b = DVector::from_fn(9, |i, _| (i as f64).sqrt());
        let y = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
        let stack = LinearOperator::scaled_stack(a.clone(), l.clone(), kappa.sqrt()).unwrap();
        let mut rhs = DVector::zeros(15);
        rhs.rows_mut(0, 9).copy_from(&b);
        rhs.rows_mut(9, 6).copy_from(&(&y * kappa.sqrt()));
        let (x, _) = lsqr_solve(&stack, &rhs, &tight()).unwrap();

        let (ad, ld) = (a.to_dense(), l.to_dense());
        let h = ad.transpose() * &ad + ld.transpose() * &ld * kappa;
        let g = ad.transpose() * &b + ld.transpose() * &y * kappa;
        let reference = h.cholesky().unwrap().solve(&g);
        assert!((x - &reference).norm() <= 1e-8 * reference.norm());
    }
}
