//! Deterministic test problems. Every generator returns noise-free data
//! `b = A x_true` and the suggested constraint level `τ* = ‖L x_true‖₁`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linops::{
    make_diff_1d, make_gaussian_random, make_grad_2d, make_gravity, make_parallel_tomo, make_toeplitz_conv, ConvKernel,
    LinearOperator, OperatorKind,
};
use crate::rng::SplitMix64;

/// Parameters that fully determine a generated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemSpec {
    Spiky { n: usize, sigma: f64, n_spikes: usize, seed: u64 },
    Cs { n: usize, m: usize, n_spikes: usize, seed: u64 },
    Tv { n: usize, sigma: f64, n_jumps: usize, seed: u64 },
    Gravity { n: usize, depth: f64, n_jumps: usize, seed: u64 },
    Tomo { grid: usize, n_angles: usize, seed: u64 },
    Diag { n: usize },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match *self {
            ProblemSpec::Spiky { n, sigma, n_spikes, seed } => spiky_deconv(n, sigma, n_spikes, seed),
            ProblemSpec::Cs { n, m, n_spikes, seed } => compressed_sensing(n, m, n_spikes, seed),
            ProblemSpec::Tv { n, sigma, n_jumps, seed } => tv_deconv(n, sigma, n_jumps, seed),
            ProblemSpec::Gravity { n, depth, n_jumps, seed } => gravity_problem(n, depth, n_jumps, seed),
            ProblemSpec::Tomo { grid, n_angles, seed } => tomo_problem(grid, n_angles, seed),
            ProblemSpec::Diag { n } => diag_illposed(n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Spiky { .. } => "spiky",
            ProblemSpec::Cs { .. } => "cs",
            ProblemSpec::Tv { .. } => "tv",
            ProblemSpec::Gravity { .. } => "gravity",
            ProblemSpec::Tomo { .. } => "tomo",
            ProblemSpec::Diag { .. } => "diag",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub seed: u64,
    pub a: LinearOperator,
    pub l: LinearOperator,
    pub b: DVector<f64>,
    pub x_true: DVector<f64>,
    pub tau_star: f64,
}

impl Problem {
    fn assemble(name: &str, seed: u64, a: LinearOperator, l: LinearOperator, x_true: DVector<f64>) -> Result<Self> {
        let b = a.apply(&x_true)?;
        let tau_star = l.apply(&x_true)?.lp_norm(1);
        Ok(Self {
            name: name.to_owned(),
            seed,
            a,
            l,
            b,
            x_true,
            tau_star,
        })
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}

fn amplitude(rng: &mut SplitMix64) -> f64 {
    let s = rng.sign();
    s * rng.uniform_range(0.5, 1.5)
}

fn sparse_signal(n: usize, count: usize, rng: &mut SplitMix64) -> Result<DVector<f64>> {
    check(n >= 3 && count <= n - 2, || format!("cannot place {count} spikes in the interior of {n} samples"))?;
    let mut x = DVector::zeros(n);
    for i in rng.distinct_indices(count, 1, n - 1) {
        x[i] = amplitude(rng);
    }
    Ok(x)
}

/// Piecewise constant from level 0 with `count` jumps at interior positions.
fn blocky_signal(n: usize, count: usize, rng: &mut SplitMix64) -> Result<DVector<f64>> {
    check(n >= 2 && count < n, || format!("cannot place {count} jumps in {n} samples"))?;
    let mut jumps = vec![0.0; n];
    for j in rng.distinct_indices(count, 1, n) {
        jumps[j] = amplitude(rng);
    }
    let mut level = 0.0;
    Ok(DVector::from_fn(n, |i, _| {
        level += jumps[i];
        level
    }))
}

/// Mexican-hat deconvolution with `t_i = i/n`, `L = I`, sparse ground truth.
pub fn spiky_deconv(n: usize, sigma: f64, n_spikes: usize, seed: u64) -> Result<Problem> {
    let a = make_toeplitz_conv(ConvKernel::MexicanHat, n, 1.0 / n as f64, sigma)?;
    let mut rng = SplitMix64::new(seed);
    let x = sparse_signal(n, n_spikes, &mut rng)?;
    Problem::assemble("spiky", seed, a, LinearOperator::identity(n), x)
}

/// Unscaled i.i.d. `N(0, 1)` sensing matrix, `L = I`, sparse ground truth.
pub fn compressed_sensing(n: usize, m: usize, n_spikes: usize, seed: u64) -> Result<Problem> {
    let a = make_gaussian_random(m, n, seed)?;
    let mut rng = SplitMix64::new(seed ^ 0x9E37_79B9_7F4A_7C15);
    let x = sparse_signal(n, n_spikes, &mut rng)?;
    Problem::assemble("cs", seed, a, LinearOperator::identity(n), x)
}

/// Gaussian-blur deconvolution with `L = D`, blocky ground truth.
pub fn tv_deconv(n: usize, sigma: f64, n_jumps: usize, seed: u64) -> Result<Problem> {
    let a = make_toeplitz_conv(ConvKernel::Gaussian, n, 1.0 / n as f64, sigma)?;
    let mut rng = SplitMix64::new(seed);
    let x = blocky_signal(n, n_jumps, &mut rng)?;
    Problem::assemble("tv", seed, a, make_diff_1d(n)?, x)
}

/// Gravity surveying with `L = D` and a piecewise-constant density.
pub fn gravity_problem(n: usize, depth: f64, n_jumps: usize, seed: u64) -> Result<Problem> {
    let a = make_gravity(n, depth)?;
    let mut rng = SplitMix64::new(seed);
    let x = blocky_signal(n, n_jumps, &mut rng)?;
    Problem::assemble("gravity", seed, a, make_diff_1d(n)?, x)
}

/// Modified Shepp–Logan ellipses on `[-1, 1]²`: `(intensity, a, b, x0, y0, angle°)`.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Phantom sampled at pixel centres; pixel `(ix, iy)` at index `ix * grid + iy`.
pub fn shepp_logan(grid: usize) -> DVector<f64> {
    let mut img = DVector::zeros(grid * grid);
    for ix in 0..grid {
        for iy in 0..grid {
            // Image square [-½, ½]² maps onto the phantom square [-1, 1]².
            let x = 2.0 * ((ix as f64 + 0.5) / grid as f64 - 0.5);
            let y = 2.0 * ((iy as f64 + 0.5) / grid as f64 - 0.5);
            let mut v = 0.0;
            for &(rho, a, b, x0, y0, deg) in &SHEPP_LOGAN {
                let (s, c) = deg.to_radians().sin_cos();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * c + dy * s;
                let w = -dx * s + dy * c;
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += rho;
                }
            }
            img[ix * grid + iy] = v;
        }
    }
    img
}

/// Parallel-beam tomography of the Shepp–Logan phantom with `L` the 2-D gradient.
/// Angles are `k · 180°/n_angles`. The phantom is deterministic; `seed` is recorded only.
pub fn tomo_problem(grid: usize, n_angles: usize, seed: u64) -> Result<Problem> {
    check(n_angles >= 1, || "tomography needs at least one angle".into())?;
    let angles: Vec<f64> = (0..n_angles).map(|k| k as f64 * 180.0 / n_angles as f64).collect();
    let a = make_parallel_tomo(grid, &angles)?;
    let l = make_grad_2d(grid, grid)?;
    Problem::assemble("tomo", seed, a, l, shepp_logan(grid))
}

/// `A = diag(e^{-(i-1)/2})`, `L = I`, `x_true = 1`.
pub fn diag_illposed(n: usize) -> Result<Problem> {
    check(n >= 1, || "diag problem needs n >= 1".into())?;
    let a = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (-(i as f64) / 2.0).exp()));
    Problem::assemble("diag", 0, LinearOperator::dense(a), LinearOperator::identity(n), DVector::from_element(n, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OperatorFile {
    Identity { n: usize },
    Diff1d { n: usize },
    Grad2d { nx: usize, ny: usize },
    Dense { rows: usize, cols: usize, file: String },
    Triplets { rows: usize, cols: usize, file: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProblemManifest {
    name: String,
    seed: u64,
    m: usize,
    n: usize,
    p: usize,
    tau_star: f64,
    a: OperatorFile,
    l: OperatorFile,
    b: String,
    x_true: String,
}

fn export_operator(op: &LinearOperator, dir: &Path, stem: &str) -> Result<OperatorFile> {
    let (rows, cols) = op.shape();
    Ok(match op.kind() {
        OperatorKind::Identity => OperatorFile::Identity { n: rows },
        OperatorKind::Diff1d => OperatorFile::Diff1d { n: cols },
        OperatorKind::Grad2d { nx, ny } => OperatorFile::Grad2d { nx: *nx, ny: *ny },
        OperatorKind::Tomo { matrix, .. } | OperatorKind::Sparse(matrix) => {
            let file = format!("{stem}.triplets.csv");
            io::write_triplets(dir.join(&file), matrix)?;
            OperatorFile::Triplets { rows, cols, file }
        }
        _ => {
            let file = format!("{stem}.csv");
            io::write_matrix(dir.join(&file), &op.to_dense())?;
            OperatorFile::Dense { rows, cols, file }
        }
    })
}

fn import_operator(desc: &OperatorFile, dir: &Path) -> Result<LinearOperator> {
    match desc {
        OperatorFile::Identity { n } => Ok(LinearOperator::identity(*n)),
        OperatorFile::Diff1d { n } => make_diff_1d(*n),
        OperatorFile::Grad2d { nx, ny } => make_grad_2d(*nx, *ny),
        OperatorFile::Dense { rows, cols, file } => {
            let m = io::read_matrix(dir.join(file))?;
            if m.shape() != (*rows, *cols) {
                return Err(Error::Format(format!("{file}: expected {rows}x{cols}, found {:?}", m.shape())));
            }
            Ok(LinearOperator::dense(m))
        }
        OperatorFile::Triplets { rows, cols, file } => Ok(LinearOperator::sparse(io::read_triplets(dir.join(file), *rows, *cols)?)),
    }
}

/// Writes `manifest.json` plus CSV files for the operators and vectors.
pub fn export_problem(problem: &Problem, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ProblemManifest {
        name: problem.name.clone(),
        seed: problem.seed,
        m: problem.a.rows(),
        n: problem.a.cols(),
        p: problem.l.rows(),
        tau_star: problem.tau_star,
        a: export_operator(&problem.a, dir, "A")?,
        l: export_operator(&problem.l, dir, "L")?,
        b: "b.csv".into(),
        x_true: "x_true.csv".into(),
    };
    io::write_vector(dir.join(&manifest.b), "b", &problem.b)?;
    io::write_vector(dir.join(&manifest.x_true), "x_true", &problem.x_true)?;
    io::write_json(dir.join("manifest.json"), &manifest)
}

pub fn import_problem(dir: &Path) -> Result<Problem> {
    let manifest: ProblemManifest = io::read_json(dir.join("manifest.json"))?;
    let a = import_operator(&manifest.a, dir)?;
    let l = import_operator(&manifest.l, dir)?;
    let b = io::read_vector(dir.join(&manifest.b))?;
    let x_true = io::read_vector(dir.join(&manifest.x_true))?;
    if a.shape() != (manifest.m, manifest.n) || l.shape() != (manifest.p, manifest.n) || b.len() != manifest.m || x_true.len() != manifest.n {
        return Err(Error::Format("problem files disagree with the manifest sizes".into()));
    }
    Ok(Problem {
        name: manifest.name,
        seed: manifest.seed,
        a,
        l,
        b,
        x_true,
        tau_star: manifest.tau_star,
    })
}
