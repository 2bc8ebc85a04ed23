//! Fixtures shared by the benchmarks.

use sr3_core::problems::{gravity_problem, tomo_problem};
use sr3_core::{Problem, Regularizer, Sr3Config};

pub fn gravity(n: usize) -> Problem {
    gravity_problem(n, 0.25, 4, 1).expect("valid gravity parameters")
}

pub fn tomo(grid: usize) -> Problem {
    tomo_problem(grid, 18, 0).expect("valid tomography parameters")
}

/// Constraint-mode configuration at the true `τ`, capped so a bench sample stays short.
pub fn config(problem: &Problem, kappa: f64) -> Sr3Config {
    Sr3Config {
        max_outer: 200,
        ..Sr3Config::new(kappa, Regularizer::L1Ball { tau: problem.tau_star })
    }
}
