use std::fs;
use std::path::Path;
use std::thread;

use anyhow::Context;
use serde::Serialize;

use sr3_core::gsvd::{gsvd, hk_singular_values, fk_singular_values, StandardForm};
use sr3_core::io::{write_columns, write_json, write_vector};
use sr3_core::pareto::{trace_pareto, TraceOptions};
use sr3_core::problems::export_problem;
use sr3_core::sr3::{fista_solve, sr3_solve};
use sr3_core::{FistaOptions, Kappa, Mode, Problem, Regularizer, SolveResult, Sr3Config};

use crate::args::{ExportArgs, IterationsArgs, Method, ModeArg, ParetoArgs, SolveArgs, SolverArgs, SpectrumArgs, TauArg};
use crate::CliError;

/// Files written by a command and whether every solve converged.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub converged: bool,
}

fn build(problem: &crate::args::ProblemArgs) -> Result<Problem, CliError> {
    problem.spec().build().map_err(|e| CliError::Usage(e.to_string()))
}

fn resolve_tau(tau: TauArg, problem: &Problem) -> f64 {
    match tau {
        TauArg::Auto => problem.tau_star,
        TauArg::Value(v) => v,
    }
}

fn sr3_config(solver: &SolverArgs, kappa: f64, reg: Regularizer, mode: Mode) -> Sr3Config {
    Sr3Config {
        kappa,
        reg,
        inner_eps: solver.eps,
        outer_delta: solver.delta,
        max_outer: solver.max_outer,
        max_inner: solver.max_inner,
        mode,
        lsqr_atol: solver.lsqr_atol,
        gap_tol: None,
    }
}

fn fista_options(solver: &SolverArgs) -> FistaOptions {
    FistaOptions {
        max_iter: solver.max_iter,
        gap_tol: solver.gap_tol,
        ..FistaOptions::default()
    }
}

fn last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(f64::NAN)
}

#[derive(Serialize)]
struct SolveSummary {
    problem: String,
    method: Method,
    kappa: f64,
    regularizer: Regularizer,
    n: usize,
    outer_iterations: usize,
    total_inner: usize,
    converged: bool,
    final_residual: f64,
    final_gap: f64,
    final_objective: f64,
    /// `‖x − x_true‖ / ‖x_true‖`.
    relative_error: f64,
}

fn write_history(path: &Path, result: &SolveResult) -> sr3_core::Result<()> {
    let k = result.residual_history.len();
    let pad = |v: &[f64]| -> Vec<f64> { (0..k).map(|i| v.get(i).copied().unwrap_or(f64::NAN)).collect() };
    let iterations: Vec<f64> = (1..=k).map(|i| i as f64).collect();
    let inner: Vec<f64> = (0..k).map(|i| result.inner_iterations.get(i).map_or(f64::NAN, |&c| c as f64)).collect();
    write_columns(
        path,
        &["iteration", "inner", "residual", "gap", "objective"],
        &[iterations, inner, pad(&result.residual_history), pad(&result.gap_history), pad(&result.objective_history)],
    )
}

pub fn solve(args: &SolveArgs, out: &Path) -> Result<Outcome, CliError> {
    let problem = build(&args.problem)?;
    let reg = match args.lambda {
        Some(lambda) => Regularizer::l1_penalty(lambda),
        None => Regularizer::l1_ball(resolve_tau(args.tau, &problem)),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let result = match args.method {
        Method::Sr3 | Method::Sr3Exact => {
            let mode = if args.method == Method::Sr3 { Mode::Inexact } else { Mode::Exact };
            let config = sr3_config(&args.solver, args.kappa, reg, mode);
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            sr3_solve(&problem.a, &problem.l, &problem.b, &config)?
        }
        Method::Fista => {
            if !problem.l.is_identity() {
                return Err(CliError::Usage(format!(
                    "fista needs L = I, but '{}' has a general L; use --method standard-form",
                    problem.name
                )));
            }
            fista_solve(&problem.a, &problem.b, &reg, &fista_options(&args.solver))?
        }
        Method::StandardForm => {
            let sf = StandardForm::new(&problem.a.to_dense(), &problem.l.to_dense(), &problem.b)?;
            let sol = sf.solve(&reg, &fista_options(&args.solver))?;
            SolveResult { x: sol.x, ..sol.report }
        }
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_vector(out.join("x.csv"), "x", &result.x)?;
    write_vector(out.join("y.csv"), "y", &result.y)?;
    write_history(&out.join("history.csv"), &result)?;
    let summary = SolveSummary {
        problem: problem.name.clone(),
        method: args.method,
        kappa: args.kappa,
        regularizer: reg,
        n: problem.a.cols(),
        outer_iterations: result.outer_iterations,
        total_inner: result.total_inner(),
        converged: result.converged,
        final_residual: last(&result.residual_history),
        final_gap: last(&result.gap_history),
        final_objective: last(&result.objective_history),
        relative_error: (&result.x - &problem.x_true).norm() / problem.x_true.norm().max(f64::MIN_POSITIVE),
    };
    write_json(out.join("result.json"), &summary)?;
    Ok(Outcome {
        outputs: vec!["x.csv".into(), "y.csv".into(), "history.csv".into(), "result.json".into()],
        converged: result.converged,
    })
}

fn kappa_file(prefix: &str, kappa: Kappa) -> String {
    format!("{prefix}_kappa_{kappa}.csv")
}

#[derive(Serialize)]
struct CornerRow {
    kappa: Kappa,
    file: String,
    corner_index: Option<usize>,
    corner_tau: Option<f64>,
    all_ok: bool,
}

pub fn pareto(args: &ParetoArgs, out: &Path) -> Result<Outcome, CliError> {
    let problem = build(&args.problem)?;
    let taus = match &args.taus {
        Some(t) => t.clone(),
        None => {
            if args.points == 0 || args.tau_max.is_nan() || args.tau_max <= 0.0 {
                return Err(CliError::Usage("empty tau grid: need --points >= 1 and --tau-max > 0".into()));
            }
            let top = args.tau_max * problem.tau_star;
            (1..=args.points).map(|i| top * i as f64 / args.points as f64).collect()
        }
    };
    if taus.is_empty() {
        return Err(CliError::Usage("empty tau grid".into()));
    }
    let options = TraceOptions {
        sr3: sr3_config(&args.solver, 1.0, Regularizer::None, Mode::Inexact),
        fista: fista_options(&args.solver),
        ..TraceOptions::default()
    };

    let curves = thread::scope(|s| {
        let handles: Vec<_> = args
            .kappa
            .iter()
            .map(|&kappa| {
                let (problem, taus, options) = (&problem, &taus, &options);
                s.spawn(move || trace_pareto(&problem.a, &problem.l, &problem.b, taus, kappa, options))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("pareto worker panicked")).collect::<Vec<_>>()
    });

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut outputs = Vec::new();
    let mut corners = Vec::new();
    let mut converged = true;
    for curve in curves {
        let curve = curve.map_err(|e| match e {
            sr3_core::Error::InvalidArgument(msg) => CliError::Usage(msg),
            other => other.into(),
        })?;
        let file = kappa_file("pareto", curve.kappa);
        let col = |f: fn(&sr3_core::ParetoPoint) -> f64| curve.points.iter().map(f).collect::<Vec<f64>>();
        write_columns(
            out.join(&file),
            &["tau", "phi", "lower_bound", "upper_bound", "derivative", "ok"],
            &[
                col(|p| p.tau),
                col(|p| p.phi),
                col(|p| p.lower_bound),
                col(|p| p.upper_bound),
                col(|p| p.derivative_estimate),
                col(|p| f64::from(u8::from(p.ok))),
            ],
        )?;
        let all_ok = curve.points.iter().all(|p| p.ok);
        converged &= all_ok;
        corners.push(CornerRow {
            kappa: curve.kappa,
            file: file.clone(),
            corner_index: curve.corner_index,
            corner_tau: curve.corner_index.map(|i| curve.points[i].tau),
            all_ok,
        });
        outputs.push(file);
    }
    write_json(out.join("corners.json"), &corners)?;
    outputs.push("corners.json".into());
    Ok(Outcome { outputs, converged })
}

pub fn spectrum(args: &SpectrumArgs, out: &Path) -> Result<Outcome, CliError> {
    let mut kappas = Vec::new();
    for k in &args.kappa {
        match k {
            Kappa::Finite(k) => kappas.push(*k),
            Kappa::Infinite => {
                return Err(CliError::Usage(
                    "spectrum needs finite kappas; the limit sigma/gamma is written to gsv.csv".into(),
                ))
            }
        }
    }
    let problem = build(&args.problem)?;
    let (a, l) = (problem.a.to_dense(), problem.l.to_dense());
    let factors = gsvd(&a, &l)?;

    let labels: Vec<String> = args.kappa.iter().map(|k| format!("kappa_{k}")).collect();
    let headers: Vec<&str> = labels.iter().map(String::as_str).collect();
    let fk = kappas.iter().map(|&k| fk_singular_values(&factors, k)).collect::<sr3_core::Result<Vec<_>>>()?;
    let hk = kappas.iter().map(|&k| hk_singular_values(&a, &l, k)).collect::<sr3_core::Result<Vec<_>>>()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_columns(out.join("fk.csv"), &headers, &fk)?;
    write_columns(out.join("hk.csv"), &headers, &hk)?;
    write_columns(out.join("gsv.csv"), &["ratio"], &[factors.generalized_values()])?;
    write_columns(out.join("pairs.csv"), &["sigma", "gamma"], &[factors.sigma.clone(), factors.gamma.clone()])?;
    Ok(Outcome {
        outputs: vec!["fk.csv".into(), "hk.csv".into(), "gsv.csv".into(), "pairs.csv".into()],
        converged: true,
    })
}

pub fn iterations(args: &IterationsArgs, out: &Path) -> Result<Outcome, CliError> {
    let problem = build(&args.problem)?;
    let reg = Regularizer::l1_ball(resolve_tau(args.tau, &problem)).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut kappas = Vec::new();
    for k in &args.kappa {
        match k {
            Kappa::Finite(k) => kappas.push(*k),
            Kappa::Infinite => return Err(CliError::Usage("iterations needs finite kappas".into())),
        }
    }
    let modes: &[(Mode, &str)] = match args.mode {
        ModeArg::Exact => &[(Mode::Exact, "exact")],
        ModeArg::Inexact => &[(Mode::Inexact, "inexact")],
        ModeArg::Both => &[(Mode::Exact, "exact"), (Mode::Inexact, "inexact")],
    };
    for &k in &kappas {
        sr3_config(&args.solver, k, reg, Mode::Exact)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let runs = thread::scope(|s| {
        let handles: Vec<_> = modes
            .iter()
            .flat_map(|&(mode, _)| kappas.iter().map(move |&k| (mode, k)))
            .map(|(mode, k)| {
                let (problem, solver) = (&problem, &args.solver);
                s.spawn(move || sr3_solve(&problem.a, &problem.l, &problem.b, &sr3_config(solver, k, reg, mode)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("iteration worker panicked")).collect::<Vec<_>>()
    });

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut outputs = Vec::new();
    let mut converged = true;
    let mut runs = runs.into_iter();
    for &(_, name) in modes {
        let mut cols = vec![Vec::new(); 5];
        for &k in &kappas {
            let r = runs.next().expect("one run per mode and kappa")?;
            converged &= r.converged;
            // One extra apply per outer step forms the warm-started residual.
            let cost = r.total_inner() + r.outer_iterations;
            for (c, v) in cols.iter_mut().zip([k, r.outer_iterations as f64, r.total_inner() as f64, cost as f64, f64::from(u8::from(r.converged))]) {
                c.push(v);
            }
        }
        let file = format!("iterations_{name}.csv");
        write_columns(out.join(&file), &["kappa", "outer", "total_inner", "total_cost", "converged"], &cols)?;
        outputs.push(file);
    }
    Ok(Outcome { outputs, converged })
}

pub fn export(args: &ExportArgs, out: &Path) -> Result<Outcome, CliError> {
    let problem = build(&args.problem)?;
    export_problem(&problem, out)?;
    let mut outputs: Vec<String> = fs::read_dir(out)
        .with_context(|| format!("listing {}", out.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|f| f != crate::MANIFEST)
        .collect();
    outputs.sort();
    Ok(Outcome { outputs, converged: true })
}
