//! Proximal maps of the ℓ1 regularizers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The regularization term `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `R(y) = λ‖y‖₁`.
    L1Penalty { lambda: f64 },
    /// Indicator of the ball `‖y‖₁ ≤ τ`.
    L1Ball { tau: f64 },
    None,
}

impl Regularizer {
    pub fn l1_penalty(lambda: f64) -> Result<Self> {
        nonnegative("lambda", lambda)?;
        Ok(Regularizer::L1Penalty { lambda })
    }

    pub fn l1_ball(tau: f64) -> Result<Self> {
        nonnegative("tau", tau)?;
        Ok(Regularizer::L1Ball { tau })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1Penalty { lambda } => nonnegative("lambda", lambda),
            Regularizer::L1Ball { tau } => nonnegative("tau", tau),
            Regularizer::None => Ok(()),
        }
    }

    /// Value of `R(y)`; infinite outside the ball in constraint mode.
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::L1Penalty { lambda } => lambda * y.lp_norm(1),
            Regularizer::L1Ball { tau } => {
                if y.lp_norm(1) <= tau * (1.0 + 1e-12) + 1e-300 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::None => 0.0,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            Regularizer::L1Ball { tau } => Some(tau),
            _ => None,
        }
    }
}

fn nonnegative(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be a nonnegative finite number, got {value}")))
    }
}

/// Componentwise `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    nonnegative("threshold", t)?;
    Ok(v.map(|x| x.signum() * (x.abs() - t).max(0.0)))
}

/// Euclidean projection onto `{y : ‖y‖₁ ≤ τ}`.
///
/// Sorts `|v|` descending and finds the pivot `θ` of the largest prefix
/// with `|v|_(k) > (Σ_{i≤k} |v|_(i) - τ) / k`.
pub fn project_l1_ball(v: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    nonnegative("tau", tau)?;
    let l1 = v.lp_norm(1);
    if l1 <= tau {
        return Ok(v.clone());
    }
    if tau == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumulative += m;
        let candidate = (cumulative - tau) / (k + 1) as f64;
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(v.map(|x| x.signum() * (x.abs() - theta).max(0.0)))
}

/// `prox_{step·R}(v)`. For the ball constraint the step has no effect.
pub fn prox_apply(reg: &Regularizer, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("prox step must be positive, got {step}")));
    }
    match *reg {
        Regularizer::L1Penalty { lambda } => soft_threshold(v, step * lambda),
        Regularizer::L1Ball { tau } => project_l1_ball(v, tau),
        Regularizer::None => Ok(v.clone()),
    }
}
