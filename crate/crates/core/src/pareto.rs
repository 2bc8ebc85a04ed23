//! Pareto curves `φ(τ) = min ‖Ax − b‖₂ s.t. ‖Lx‖₁ ≤ τ` and their relaxed
//! counterparts `φ_κ(τ) = min ‖F_κ y − g_κ‖₂ s.t. ‖y‖₁ ≤ τ`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::gsvd::{build_relaxed_system, StandardForm};
use crate::linops::LinearOperator;
use crate::lsqr::{lsqr_solve_shifted, LsqrOptions};
use crate::prox::Regularizer;
use crate::sr3::{ball_certificate, fista_solve, relaxed_certificate, sr3_solve, FistaOptions, Sr3Config};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    /// The unrelaxed problem.
    Infinite,
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Finite(k) => write!(f, "{k}"),
            Kappa::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Kappa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Kappa::Infinite);
        }
        let k: f64 = s.parse().map_err(|_| Error::InvalidArgument(format!("bad kappa '{s}'")))?;
        if k.is_infinite() && k > 0.0 {
            Ok(Kappa::Infinite)
        } else if k > 0.0 {
            Ok(Kappa::Finite(k))
        } else {
            Err(Error::InvalidArgument(format!("kappa must be positive, got {s}")))
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Kappa::Finite(k) => s.serialize_f64(*k),
            Kappa::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Kappa {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) if k > 0.0 => Ok(Kappa::Finite(k)),
            Raw::Num(k) => Err(serde::de::Error::custom(format!("kappa must be positive, got {k}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub tau: f64,
    pub phi: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub derivative_estimate: f64,
    /// False when the solver hit its iteration cap or failed at this sample.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    pub points: Vec<ParetoPoint>,
    pub kappa: Kappa,
    pub corner_index: Option<usize>,
}

impl ParetoCurve {
    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau).collect()
    }

    pub fn phis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phi).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// SR3 settings for finite κ; `kappa` and `reg` are set per sample.
    pub sr3: Sr3Config,
    /// FISTA settings for the unrelaxed curve.
    pub fista: FistaOptions,
    /// LSQR tolerance used to recompute `x(y)` at the returned `y`.
    pub polish_atol: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            sr3: Sr3Config::default(),
            fista: FistaOptions::default(),
            polish_atol: 1e-12,
        }
    }
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("empty tau grid".into()));
    }
    if taus.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("taus must be finite and nonnegative".into()));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("taus must be strictly increasing".into()));
    }
    Ok(())
}

fn failed(tau: f64) -> ParetoPoint {
    ParetoPoint {
        tau,
        phi: f64::NAN,
        lower_bound: f64::NAN,
        upper_bound: f64::NAN,
        derivative_estimate: f64::NAN,
        ok: false,
    }
}

/// Samples the (relaxed) Pareto curve at the given `τ` values.
///
/// Finite κ uses SR3 in constraint mode and reports `φ_κ = √(‖Ax−b‖² + κ‖Lx−y‖²)`
/// with `x = x(y)` recomputed at the returned `y`. The infinite marker solves
/// the original problem with FISTA (through the standard form when `L ≠ I`).
pub fn trace_pareto(
    a: &LinearOperator,
    l: &LinearOperator,
    b: &DVector<f64>,
    taus: &[f64],
    kappa: Kappa,
    options: &TraceOptions,
) -> Result<ParetoCurve> {
    check_len("pareto: columns of L", a.cols(), l.cols())?;
    check_len("pareto: b", a.rows(), b.len())?;
    check_taus(taus)?;
    let points = match kappa {
        Kappa::Finite(k) => taus.iter().map(|&tau| relaxed_point(a, l, b, tau, k, options)).collect(),
        Kappa::Infinite => {
            if l.is_identity() {
                taus.iter().map(|&tau| original_point(a, b, tau, &options.fista)).collect()
            } else {
                let sf = StandardForm::new(&a.to_dense(), &l.to_dense(), b)?;
                let a_bar = LinearOperator::dense(sf.a_bar.clone());
                taus.iter().map(|&tau| original_point(&a_bar, &sf.b_bar, tau, &options.fista)).collect()
            }
        }
    };
    let mut curve = ParetoCurve {
        points,
        kappa,
        corner_index: None,
    };
    curve.corner_index = corner_detect(&curve)?;
    Ok(curve)
}

fn original_point(a: &LinearOperator, b: &DVector<f64>, tau: f64, fista: &FistaOptions) -> ParetoPoint {
    let solved = fista_solve(a, b, &Regularizer::L1Ball { tau }, fista).and_then(|res| {
        let cert = ball_certificate(a, b, tau, &res.x)?;
        Ok((res.converged, cert))
    });
    match solved {
        Ok((converged, cert)) => ParetoPoint {
            tau,
            phi: cert.residual_norm,
            lower_bound: cert.lower,
            upper_bound: cert.upper,
            derivative_estimate: cert.derivative,
            ok: converged,
        },
        Err(_) => failed(tau),
    }
}

fn relaxed_point(a: &LinearOperator, l: &LinearOperator, b: &DVector<f64>, tau: f64, kappa: f64, options: &TraceOptions) -> ParetoPoint {
    let config = Sr3Config {
        kappa,
        reg: Regularizer::L1Ball { tau },
        ..options.sr3
    };
    let solved = sr3_solve(a, l, b, &config).and_then(|res| {
        let (x, _) = inner_minimizer(a, l, b, &res.y, kappa, &res.x, options.polish_atol)?;
        let cert = relaxed_certificate(&(a.apply(&x)? - b), &(l.apply(&x)? - &res.y), &res.y, kappa, tau);
        Ok((res.converged, cert))
    });
    match solved {
        Ok((converged, cert)) => ParetoPoint {
            tau,
            phi: cert.residual_norm,
            lower_bound: cert.lower,
            upper_bound: cert.upper,
            derivative_estimate: cert.derivative,
            ok: converged,
        },
        Err(_) => failed(tau),
    }
}

/// `x(y) = argmin ‖Ax − b‖² + κ‖Lx − y‖²` by LSQR warm-started at `x0`.
fn inner_minimizer(
    a: &LinearOperator,
    l: &LinearOperator,
    b: &DVector<f64>,
    y: &DVector<f64>,
    kappa: f64,
    x0: &DVector<f64>,
    atol: f64,
) -> Result<(DVector<f64>, usize)> {
    let sk = kappa.sqrt();
    let stack = LinearOperator::scaled_stack(std::sync::Arc::new(a.clone()), std::sync::Arc::new(l.clone()), sk)?;
    let mut rhs = DVector::zeros(a.rows() + l.rows());
    rhs.rows_mut(0, a.rows()).copy_from(b);
    rhs.rows_mut(a.rows(), l.rows()).copy_from(&(y * sk));
    let opts = LsqrOptions {
        atol,
        max_iter: 100_000,
    };
    let (x, stats) = lsqr_solve_shifted(&stack, &rhs, x0, &opts)?;
    Ok((x, stats.iterations))
}

/// `(lower, upper)` bounds on `φ(τ)` certified by a feasible `y`.
pub fn value_fn_bounds(a: &LinearOperator, b: &DVector<f64>, tau: f64, y: &DVector<f64>) -> Result<(f64, f64)> {
    let cert = ball_certificate(a, b, tau, y)?;
    Ok((cert.lower, cert.upper))
}

/// `(lower, upper)` bounds on `φ_κ(τ)` certified by a feasible `y`, without forming `F_κ`.
pub fn relaxed_value_bounds(
    a: &LinearOperator,
    l: &LinearOperator,
    b: &DVector<f64>,
    kappa: f64,
    tau: f64,
    y: &DVector<f64>,
) -> Result<(f64, f64)> {
    check_len("relaxed bounds: y", l.rows(), y.len())?;
    crate::sr3::duality_gap(&LinearOperator::identity(y.len()), y, tau, y)?;
    let (x, _) = inner_minimizer(a, l, b, y, kappa, &DVector::zeros(a.cols()), 1e-14)?;
    let cert = relaxed_certificate(&(a.apply(&x)? - b), &(l.apply(&x)? - y), y, kappa, tau);
    Ok((cert.lower, cert.upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub kappa: f64,
    pub phi_kappa: f64,
    pub phi_inf: f64,
    /// `φ_κ² − φ_∞²`.
    pub lhs: f64,
    /// `−κ⁻¹‖Āᵀ(b̄ − Ā ȳ_κ)‖²`.
    pub firstorder: f64,
    pub remainder: f64,
}

/// Compares the relaxed and original curves at one `τ` over several κ.
///
/// Both problems are solved to high accuracy on dense data (the relaxed one
/// on the explicitly assembled `F_κ`), so this is a desk-scale check.
pub fn pareto_distance_check(
    a: &LinearOperator,
    l: &LinearOperator,
    b: &DVector<f64>,
    tau: f64,
    kappas: &[f64],
    fista: &FistaOptions,
) -> Result<Vec<DistanceRow>> {
    check_len("distance check: columns of L", a.cols(), l.cols())?;
    check_len("distance check: b", a.rows(), b.len())?;
    if kappas.iter().any(|k| !(*k > 0.0)) || kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("kappas must be positive and increasing".into()));
    }
    let (ad, ld) = (a.to_dense(), l.to_dense());
    let sf = StandardForm::new(&ad, &ld, b)?;
    let a_bar = LinearOperator::dense(sf.a_bar.clone());
    let reg = Regularizer::L1Ball { tau };
    let original = fista_solve(&a_bar, &sf.b_bar, &reg, fista)?;
    let phi_inf = (&sf.b_bar - &sf.a_bar * &original.x).norm();

    kappas
        .iter()
        .map(|&kappa| {
            let sys = build_relaxed_system(&ad, &ld, b, kappa)?;
            let f_op = LinearOperator::dense(sys.f_kappa.clone());
            let relaxed = fista_solve(&f_op, &sys.g_kappa, &reg, fista)?;
            let y = relaxed.x;
            let phi_kappa = (&sys.f_kappa * &y - &sys.g_kappa).norm();
            let grad = sf.a_bar.transpose() * (&sf.b_bar - &sf.a_bar * &y);
            let lhs = phi_kappa * phi_kappa - phi_inf * phi_inf;
            let firstorder = -grad.norm_squared() / kappa;
            Ok(DistanceRow {
                kappa,
                phi_kappa,
                phi_inf,
                lhs,
                firstorder,
                remainder: lhs - firstorder,
            })
        })
        .collect()
}

/// Least-squares slope of `log|y|` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs two or more paired samples".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 || !sxy.is_finite() {
        return Err(Error::InvalidArgument("degenerate slope fit".into()));
    }
    Ok(sxy / sxx)
}

/// Index of maximum discrete curvature of `(log τ, log φ)` among interior
/// points, counting only turns from steep to flat. `None` for straight or
/// flat curves. Samples with `τ ≤ 0` or `φ ≤ 0` are skipped.
pub fn corner_detect(curve: &ParetoCurve) -> Result<Option<usize>> {
    if curve.points.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "corner detection needs at least 5 points, got {}",
            curve.points.len()
        )));
    }
    let phi_max = curve.points.iter().map(|p| p.phi).filter(|p| p.is_finite()).fold(0.0, f64::max);
    let usable: Vec<(usize, f64, f64)> = curve
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.tau > 0.0 && p.phi.is_finite() && p.phi > 1e-14 * phi_max)
        .map(|(i, p)| (i, p.tau.ln(), p.phi.ln()))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for w in usable.windows(3) {
        let (p0, p1, p2) = (w[0], w[1], w[2]);
        let (ax, ay) = (p1.1 - p0.1, p1.2 - p0.2);
        let (bx, by) = (p2.1 - p1.1, p2.2 - p1.2);
        let cross = ax * by - ay * bx;
        let d01 = ax.hypot(ay);
        let d12 = bx.hypot(by);
        let d02 = (p2.1 - p0.1).hypot(p2.2 - p0.2);
        if d01 == 0.0 || d12 == 0.0 || d02 == 0.0 {
            continue;
        }
        let curvature = 2.0 * cross / (d01 * d12 * d02);
        if curvature > 1e-8 && best.is_none_or(|(_, c)| curvature > c) {
            best = Some((p1.0, curvature));
        }
    }
    Ok(best.map(|(i, _)| i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn curve_from(taus: &[f64], phis: &[f64]) -> ParetoCurve {
        ParetoCurve {
            points: taus
                .iter()
                .zip(phis)
                .map(|(&tau, &phi)| ParetoPoint {
                    tau,
                    phi,
                    lower_bound: phi,
                    upper_bound: phi,
                    derivative_estimate: 0.0,
                    ok: true,
                })
                .collect(),
            kappa: Kappa::Infinite,
            corner_index: None,
        }
    }

    #[test]
    fn kappa_parsing() {
        assert_eq!("inf".parse::<Kappa>().unwrap(), Kappa::Infinite);
        assert_eq!("1e2".parse::<Kappa>().unwrap(), Kappa::Finite(100.0));
        assert!("-1".parse::<Kappa>().is_err());
        assert!("abc".parse::<Kappa>().is_err());
        let json = serde_json::to_string(&vec![Kappa::Finite(0.5), Kappa::Infinite]).unwrap();
        assert_eq!(json, r#"[0.5,"inf"]"#);
        let back: Vec<Kappa> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Kappa::Finite(0.5), Kappa::Infinite]);
    }

    #[test]
    fn corner_of_perfect_l() {
        // Steep segment then flat segment in log-log, junction at index 4.
        let taus: Vec<f64> = (0..9).map(|i| 10f64.powi(i)).collect();
        let phis: Vec<f64> = (0..9).map(|i| if i <= 4 { 10f64.powi(-3 * i) } else { 10f64.powi(-12 - (i - 4)) }).collect();
        let c = curve_from(&taus, &phis);
        assert_eq!(corner_detect(&c).unwrap(), Some(4));
    }

    #[test]
    fn straight_and_flat_have_no_corner() {
        let taus: Vec<f64> = (1..8).map(|i| i as f64).collect();
        let straight: Vec<f64> = taus.iter().map(|t| t.powf(-1.5)).collect();
        assert_eq!(corner_detect(&curve_from(&taus, &straight)).unwrap(), None);
        let flat = vec![2.0; taus.len()];
        assert_eq!(corner_detect(&curve_from(&taus, &flat)).unwrap(), None);
        assert!(corner_detect(&curve_from(&taus[..4], &flat[..4])).is_err());
    }

    #[test]
    fn bounds_at_zero() {
        let a = LinearOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]));
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let tau = 0.5;
        let (lo, hi) = value_fn_bounds(&a, &b, tau, &DVector::zeros(2)).unwrap();
        let atb = a.apply_adjoint(&b).unwrap().amax();
        assert!((hi - b.norm()).abs() < 1e-15);
        assert!((lo - (b.norm() - tau * atb / b.norm())).abs() < 1e-14);
        let (_, hi0) = value_fn_bounds(&a, &b, 0.0, &DVector::zeros(2)).unwrap();
        assert_eq!(hi0, b.norm());
        assert!(value_fn_bounds(&a, &b, 0.1, &DVector::from_element(2, 1.0)).is_err());
    }

    #[test]
    fn trace_endpoints_on_consistent_square_system() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.1, 1.5, 0.2, 0.0, 0.4, 1.0]);
        let x_true = DVector::from_column_slice(&[1.0, -0.5, 0.25]);
        let b = &a * &x_true;
        let op = LinearOperator::dense(a);
        let tau_star = x_true.lp_norm(1);
        let taus = [0.0, 0.25 * tau_star, 0.5 * tau_star, tau_star, 1.5 * tau_star];
        let opts = TraceOptions {
            sr3: Sr3Config {
                inner_eps: 1e-12,
                outer_delta: 1e-12,
                lsqr_atol: 1e-14,
                ..Default::default()
            },
            fista: FistaOptions {
                gap_tol: 1e-12,
                ..Default::default()
            },
            ..Default::default()
        };
        let curve = trace_pareto(&op, &LinearOperator::identity(3), &b, &taus, Kappa::Infinite, &opts).unwrap();
        assert!((curve.points[0].phi - b.norm()).abs() < 1e-12);
        assert!(curve.points[4].phi < 1e-6);
        assert!(curve.points.windows(2).all(|w| w[1].phi <= w[0].phi + 1e-10));
        let relaxed = trace_pareto(&op, &LinearOperator::identity(3), &b, &taus, Kappa::Finite(1.0), &opts).unwrap();
        for (r, o) in relaxed.points.iter().zip(&curve.points) {
            assert!(r.phi <= o.phi + 1e-8, "{} > {} at {}", r.phi, o.phi, r.tau);
            assert!(r.lower_bound <= r.phi + 1e-8 && r.phi <= r.upper_bound + 1e-8);
        }
        assert!(trace_pareto(&op, &LinearOperator::identity(3), &b, &[], Kappa::Infinite, &opts).is_err());
        assert!(trace_pareto(&op, &LinearOperator::identity(3), &b, &[1.0, 0.5], Kappa::Infinite, &opts).is_err());
    }

    #[test]
    fn slope_fit() {
        let xs = [1e2, 1e3, 1e4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| -3.0 * x.powi(-2)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 2.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
    }
}
