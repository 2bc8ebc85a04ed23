//! The SR3 outer iteration.
//!
//! Each outer step solves the stacked least-squares problem
//! `min ‖[A; √κ L] x − [b; √κ y_k]‖` with LSQR, warm-started at `x_k`, then
//! sets `y_{k+1} = prox_{R/κ}(L x_{k+1})`. In inexact mode LSQR is cut off as
//! soon as the prospective update `ỹ_l = prox_{R/κ}(L x_l)` stagnates.

mod fista;
mod gap;

use std::ops::ControlFlow;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use fista::{default_step, fista_solve, FistaOptions};
pub use gap::{duality_gap, BallCertificate, FEASIBILITY_SLACK};
pub(crate) use gap::{ball_certificate, relaxed_certificate};

use crate::error::{check_len, Error, Result};
use crate::linops::LinearOperator;
use crate::lsqr::{lsqr_solve, lsqr_solve_with, LsqrOptions};
use crate::prox::{prox_apply, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Inner LSQR runs to `lsqr_atol`.
    Exact,
    /// Inner LSQR stops when the prospective `ỹ` changes by less than `inner_eps` (relative).
    Inexact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sr3Config {
    pub kappa: f64,
    pub reg: Regularizer,
    pub inner_eps: f64,
    /// Outer stop: `‖x_{k+1} − x_k‖ / max(‖x_k‖, 1) < outer_delta`.
    pub outer_delta: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub mode: Mode,
    pub lsqr_atol: f64,
    /// Optional early stop once the monitored gap reaches this value.
    pub gap_tol: Option<f64>,
}

impl Default for Sr3Config {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            reg: Regularizer::None,
            inner_eps: 1e-6,
            outer_delta: 1e-6,
            max_outer: 10_000,
            max_inner: 10_000,
            mode: Mode::Inexact,
            lsqr_atol: 1e-6,
            gap_tol: None,
        }
    }
}

impl Sr3Config {
    pub fn new(kappa: f64, reg: Regularizer) -> Self {
        Self {
            kappa,
            reg,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("kappa", self.kappa)?;
        positive("inner_eps", self.inner_eps)?;
        positive("outer_delta", self.outer_delta)?;
        positive("lsqr_atol", self.lsqr_atol)?;
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidArgument("iteration caps must be >= 1".into()));
        }
        if let Some(g) = self.gap_tol {
            if !(g >= 0.0) {
                return Err(Error::InvalidArgument(format!("gap_tol must be >= 0, got {g}")));
            }
        }
        self.reg.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub outer_iterations: usize,
    /// Inner iterations (applies of `A` and `Aᵀ`) per outer step.
    pub inner_iterations: Vec<usize>,
    /// `‖A x_k − b‖₂` after each outer step.
    pub residual_history: Vec<f64>,
    /// Monitored gap after each outer step.
    ///
    /// For SR3 with `L = I` and a ball constraint this is the gap of the
    /// original problem at `y_k`; for other `L` it is the gap of the relaxed
    /// problem; in penalty mode it is the decrease of the relaxed objective.
    pub gap_history: Vec<f64>,
    /// Relaxed objective `½‖Ax−b‖² + (κ/2)‖Lx−y‖² + R(y)` after each outer step
    /// (the plain objective for FISTA).
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl SolveResult {
    pub(crate) fn empty(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            outer_iterations: 0,
            inner_iterations: Vec::new(),
            residual_history: Vec::new(),
            gap_history: Vec::new(),
            objective_history: Vec::new(),
            converged: false,
        }
    }

    pub(crate) fn direct(x: DVector<f64>, y: DVector<f64>, residual: f64) -> Self {
        Self {
            x,
            y,
            outer_iterations: 0,
            inner_iterations: Vec::new(),
            residual_history: vec![residual],
            gap_history: Vec::new(),
            objective_history: vec![0.5 * residual * residual],
            converged: true,
        }
    }

    /// Total cost in applies of `A` (and `Aᵀ`).
    pub fn total_inner(&self) -> usize {
        self.inner_iterations.iter().sum()
    }

    /// Cost spent until the monitored gap first reaches `tol`, if it does.
    pub fn cost_to_gap(&self, tol: f64) -> Option<usize> {
        let mut cost = 0;
        for (k, &g) in self.gap_history.iter().enumerate() {
            cost += self.inner_iterations.get(k).copied().unwrap_or(0);
            if g <= tol {
                return Some(cost);
            }
        }
        None
    }
}

fn relaxed_objective(ax_b: &DVector<f64>, lx_y: &DVector<f64>, y: &DVector<f64>, kappa: f64, reg: &Regularizer) -> f64 {
    0.5 * ax_b.norm_squared() + 0.5 * kappa * lx_y.norm_squared() + reg.value(y)
}

/// Runs SR3 from `x₀ = y₀ = 0`.
pub fn sr3_solve(a: &LinearOperator, l: &LinearOperator, b: &DVector<f64>, config: &Sr3Config) -> Result<SolveResult> {
    check_len("sr3: columns of L", a.cols(), l.cols())?;
    check_len("sr3: b", a.rows(), b.len())?;
    config.validate()?;

    if config.reg == Regularizer::None {
        return unregularized(a, l, b, config);
    }

    let kappa = config.kappa;
    let sk = kappa.sqrt();
    let step = 1.0 / kappa;
    let stack = LinearOperator::scaled_stack(Arc::new(a.clone()), Arc::new(l.clone()), sk)?;
    let (m, n, p) = (a.rows(), a.cols(), l.rows());
    let original_gap = l.is_identity();

    let lsqr_opts = LsqrOptions {
        atol: config.lsqr_atol,
        max_iter: config.max_inner,
    };
    let mut result = SolveResult::empty(n);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(p);
    let mut rhs = DVector::zeros(m + p);
    rhs.rows_mut(0, m).copy_from(b);
    let mut prev_objective = f64::NAN;
    // Set once x or y stagnates in inexact mode: the next step is solved
    // exactly and convergence is declared only if the outer test passes there.
    let mut confirming = false;

    for _ in 0..config.max_outer {
        rhs.rows_mut(m, p).copy_from(&(&y * sk));
        let mode = if confirming { Mode::Exact } else { config.mode };

        let (x_next, stats) = match mode {
            Mode::Exact => crate::lsqr::lsqr_solve_shifted(&stack, &rhs, &x, &lsqr_opts)?,
            Mode::Inexact => {
                let mut y_prev = y.clone();
                let mut failure = None;
                let solved = lsqr_solve_with(&stack, &rhs, Some(&x), &lsqr_opts, |_, xl| {
                    let lx = match l.apply(xl) {
                        Ok(v) => v,
                        Err(e) => {
                            failure = Some(e);
                            return ControlFlow::Break(());
                        }
                    };
                    let y_new = match prox_apply(&config.reg, &lx, step) {
                        Ok(v) => v,
                        Err(e) => {
                            failure = Some(e);
                            return ControlFlow::Break(());
                        }
                    };
                    let denom = y_prev.norm();
                    let change = (&y_new - &y_prev).norm();
                    let stagnant = if denom > 0.0 { change / denom < config.inner_eps } else { change < config.inner_eps };
                    y_prev = y_new;
                    if stagnant {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                });
                if let Some(e) = failure {
                    return Err(e);
                }
                solved?
            }
        };

        let lx = l.apply(&x_next)?;
        let y_next = prox_apply(&config.reg, &lx, step)?;
        let ax_b = a.apply(&x_next)? - b;

        let monitored = match config.reg {
            Regularizer::L1Ball { tau } if original_gap => ball_certificate(a, b, tau, &y_next)?.gap(),
            Regularizer::L1Ball { tau } => relaxed_certificate(&ax_b, &(&lx - &y), &y, kappa, tau).gap(),
            _ => f64::NAN,
        };
        let objective = relaxed_objective(&ax_b, &(&lx - &y_next), &y_next, kappa, &config.reg);
        let gap = if monitored.is_nan() {
            if prev_objective.is_nan() {
                f64::INFINITY
            } else {
                (prev_objective - objective).abs()
            }
        } else {
            monitored
        };
        prev_objective = objective;

        let change = (&x_next - &x).norm() / x.norm().max(1.0);
        let y_change = (&y_next - &y).norm() / y.norm().max(1.0);
        result.outer_iterations += 1;
        result.inner_iterations.push(stats.iterations);
        result.residual_history.push(ax_b.norm());
        result.gap_history.push(gap);
        result.objective_history.push(objective);

        x = x_next;
        y = y_next;
        let gap_reached = config.gap_tol.is_some_and(|tol| gap <= tol);
        if gap_reached || (change < config.outer_delta && mode == Mode::Exact) {
            result.converged = true;
            break;
        }
        // A frozen y also means only the x-solve is left to finish.
        confirming = change < config.outer_delta || y_change < config.outer_delta;
    }
    result.x = x;
    result.y = y;
    Ok(result)
}

/// Without a regularizer the relaxed problem is plain least squares with `y = Lx`.
fn unregularized(a: &LinearOperator, l: &LinearOperator, b: &DVector<f64>, config: &Sr3Config) -> Result<SolveResult> {
    let opts = LsqrOptions {
        atol: config.lsqr_atol,
        max_iter: config.max_inner,
    };
    let (x, stats) = lsqr_solve(a, b, &opts)?;
    let y = l.apply(&x)?;
    let residual = (a.apply(&x)? - b).norm();
    Ok(SolveResult {
        x,
        y,
        outer_iterations: 1,
        inner_iterations: vec![stats.iterations],
        residual_history: vec![residual],
        gap_history: vec![0.0],
        objective_history: vec![0.5 * residual * residual],
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::make_diff_1d;
    use crate::rng::SplitMix64;
    use crate::problems::gravity_problem;
    use nalgebra::DMatrix;

    fn random_system(seed: u64, m: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = SplitMix64::new(seed);
        let a = DMatrix::from_fn(m, n, |i, j| rng.normal() + if i == j { 4.0 } else { 0.0 });
        let b = DVector::from_fn(m, |_, _| rng.normal());
        (a, b)
    }

    #[test]
    fn unregularized_is_least_squares() {
        let (a, b) = random_system(1, 12, 6);
        let op = LinearOperator::dense(a.clone());
        let l = make_diff_1d(6).unwrap();
        let cfg = Sr3Config {
            lsqr_atol: 1e-12,
            ..Sr3Config::new(3.0, Regularizer::None)
        };
        let res = sr3_solve(&op, &l, &b, &cfg).unwrap();
        let reference = a.clone().pseudo_inverse(1e-12).unwrap() * &b;
        assert!((&res.x - &reference).norm() < 1e-9 * reference.norm());
        assert!((&res.y - l.apply(&res.x).unwrap()).norm() < 1e-14);
        assert_eq!(res.outer_iterations, 1);
    }

    #[test]
    fn tiny_kappa_gives_least_squares() {
        let (a, b) = random_system(2, 20, 20);
        let op = LinearOperator::dense(a.clone());
        let reference = a.clone().lu().solve(&b).unwrap();
        for reg in [Regularizer::L1Penalty { lambda: 0.1 }, Regularizer::L1Ball { tau: 0.5 }] {
            let res = sr3_solve(&op, &LinearOperator::identity(20), &b, &Sr3Config::new(1e-10, reg)).unwrap();
            assert!((&res.x - &reference).norm() <= 1e-4 * reference.norm());
        }
    }

    #[test]
    fn shape_and_config_errors() {
        let op = LinearOperator::identity(3);
        let b = DVector::zeros(3);
        let reg = Regularizer::L1Ball { tau: 1.0 };
        assert!(sr3_solve(&op, &LinearOperator::identity(4), &b, &Sr3Config::new(1.0, reg)).is_err());
        assert!(sr3_solve(&op, &op, &DVector::zeros(2), &Sr3Config::new(1.0, reg)).is_err());
        assert!(sr3_solve(&op, &op, &b, &Sr3Config::new(0.0, reg)).is_err());
        let capped = Sr3Config {
            max_inner: 0,
            ..Sr3Config::new(1.0, reg)
        };
        assert!(sr3_solve(&op, &op, &b, &capped).is_err());
    }

    fn fixed_point_residuals(a: &DMatrix<f64>, l: &DMatrix<f64>, b: &DVector<f64>, cfg: &Sr3Config, res: &SolveResult) -> (f64, f64) {
        let prox = prox_apply(&cfg.reg, &(l * &res.x), 1.0 / cfg.kappa).unwrap();
        let y_res = (&res.y - prox).norm() / res.y.norm().max(f64::MIN_POSITIVE);
        let h = a.transpose() * a + l.transpose() * l * cfg.kappa;
        let atb = a.transpose() * b;
        let normal = (h * &res.x - &atb - l.transpose() * &res.y * cfg.kappa).norm() / atb.norm();
        (y_res, normal)
    }

    #[test]
    fn exact_mode_reaches_fixed_point_and_descends() {
        let (a, b) = random_system(3, 15, 10);
        let l = make_diff_1d(10).unwrap();
        let ld = l.to_dense();
        let cfg = Sr3Config {
            lsqr_atol: 1e-12,
            ..Sr3Config::new(2.0, Regularizer::L1Ball { tau: 0.3 }).with_mode(Mode::Exact)
        };
        let res = sr3_solve(&LinearOperator::dense(a.clone()), &l, &b, &cfg).unwrap();
        assert!(res.converged);
        let (y_res, normal) = fixed_point_residuals(&a, &ld, &b, &cfg, &res);
        assert!(y_res <= 10.0 * cfg.outer_delta, "{y_res}");
        assert!(normal <= 10.0 * cfg.outer_delta, "{normal}");
        for w in res.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} > {}", w[1], w[0]);
        }
        assert_eq!(res.inner_iterations.len(), res.outer_iterations);
    }

    #[test]
    fn ball_iterates_feasible() {
        let (a, b) = random_system(4, 10, 10);
        let tau = 0.8;
        let cfg = Sr3Config::new(1.0, Regularizer::L1Ball { tau });
        let op = LinearOperator::dense(a);
        let mut capped = cfg;
        for k in 1..6 {
            capped.max_outer = k;
            let res = sr3_solve(&op, &LinearOperator::identity(10), &b, &capped).unwrap();
            assert!(res.y.lp_norm(1) <= tau * (1.0 + 1e-12));
            assert!(res.gap_history.iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn penalty_threshold_scales_with_kappa() {
        // prox_{(λ/κ)‖·‖₁} depends only on λ/κ, so doubling both leaves y-updates alone.
        let (a, b) = random_system(5, 12, 8);
        let op = LinearOperator::dense(a);
        let l = make_diff_1d(8).unwrap();
        let base = Sr3Config::new(1.0, Regularizer::L1Penalty { lambda: 0.2 }).with_mode(Mode::Exact);
        let doubled = Sr3Config::new(2.0, Regularizer::L1Penalty { lambda: 0.4 }).with_mode(Mode::Exact);
        let r1 = sr3_solve(&op, &l, &b, &base).unwrap();
        let r2 = sr3_solve(&op, &l, &b, &doubled).unwrap();
        let v = DVector::from_fn(7, |i, _| i as f64 * 0.1 - 0.3);
        assert_eq!(
            prox_apply(&base.reg, &v, 1.0 / base.kappa).unwrap(),
            prox_apply(&doubled.reg, &v, 1.0 / doubled.kappa).unwrap()
        );
        assert!(r1.converged && r2.converged);
    }

    #[test]
    fn inexact_not_costlier_than_exact() {
        let p = gravity_problem(64, 0.25, 4, 1).unwrap();
        let (op, l, b) = (&p.a, &p.l, &p.b);
        let reg = Regularizer::L1Ball { tau: p.tau_star };
        let config = Sr3Config {
            max_outer: 100_000,
            ..Sr3Config::new(1.0, reg)
        };
        let exact = sr3_solve(op, l, b, &config.with_mode(Mode::Exact)).unwrap();
        let inexact = sr3_solve(op, l, b, &config).unwrap();
        assert!(exact.converged && inexact.converged);
        assert!(inexact.total_inner() <= exact.total_inner());
        // Both stop on stagnation of a slowly converging iteration.
        assert!((&inexact.x - &exact.x).norm() < 1e-2 * exact.x.norm());
    }

    #[test]
    fn cost_to_gap_accumulates() {
        let mut r = SolveResult::empty(1);
        r.inner_iterations = vec![3, 4, 5];
        r.gap_history = vec![1.0, 0.1, 0.01];
        assert_eq!(r.cost_to_gap(0.1), Some(7));
        assert_eq!(r.cost_to_gap(1e-3), None);
        assert_eq!(r.total_inner(), 12);
    }
}
