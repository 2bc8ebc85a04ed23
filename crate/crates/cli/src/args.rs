use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sr3_core::problems::ProblemSpec;
use sr3_core::Kappa;

#[derive(Debug, Parser)]
#[command(name = "sr3", version, about = "Relaxed regularized least squares experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Solve a single problem instance.
    Solve(SolveArgs),
    /// Trace Pareto curves for a list of kappas.
    Pareto(ParetoArgs),
    /// Singular values of F_kappa, H_kappa and the generalized values.
    Spectrum(SpectrumArgs),
    /// Outer/inner iteration counts over a kappa sweep.
    Iterations(IterationsArgs),
    /// Write a problem to a directory of CSV files.
    Export(ExportArgs),
    /// Re-run a recorded manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn label(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Pareto(_) => "pareto",
            Command::Spectrum(_) => "spectrum",
            Command::Iterations(_) => "iterations",
            Command::Export(_) => "export",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Solve(a) => Some(&mut a.out),
            Command::Pareto(a) => Some(&mut a.out),
            Command::Spectrum(a) => Some(&mut a.out),
            Command::Iterations(a) => Some(&mut a.out),
            Command::Export(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }

    pub fn problem(&self) -> Option<&ProblemArgs> {
        match self {
            Command::Solve(a) => Some(&a.problem),
            Command::Pareto(a) => Some(&a.problem),
            Command::Spectrum(a) => Some(&a.problem),
            Command::Iterations(a) => Some(&a.problem),
            Command::Export(a) => Some(&a.problem),
            Command::Replay(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Spiky,
    Cs,
    Tv,
    Gravity,
    Tomo,
    Diag,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProblemArgs {
    #[arg(long, value_enum)]
    pub problem: ProblemName,
    /// Problem size; the grid width for tomo.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of measurements (cs).
    #[arg(long)]
    pub m: Option<usize>,
    /// Kernel width (spiky, tv).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Source depth (gravity).
    #[arg(long)]
    pub depth: Option<f64>,
    /// Number of spikes or jumps in the ground truth.
    #[arg(long)]
    pub features: Option<usize>,
    /// Number of projection angles (tomo).
    #[arg(long)]
    pub angles: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ProblemArgs {
    pub fn spec(&self) -> ProblemSpec {
        let seed = self.seed;
        match self.problem {
            ProblemName::Spiky => ProblemSpec::Spiky {
                n: self.n.unwrap_or(101),
                sigma: self.sigma.unwrap_or(0.05),
                n_spikes: self.features.unwrap_or(5),
                seed,
            },
            ProblemName::Cs => ProblemSpec::Cs {
                n: self.n.unwrap_or(101),
                m: self.m.unwrap_or(20),
                n_spikes: self.features.unwrap_or(2),
                seed,
            },
            ProblemName::Tv => ProblemSpec::Tv {
                n: self.n.unwrap_or(101),
                sigma: self.sigma.unwrap_or(0.05),
                n_jumps: self.features.unwrap_or(4),
                seed,
            },
            ProblemName::Gravity => ProblemSpec::Gravity {
                n: self.n.unwrap_or(512),
                depth: self.depth.unwrap_or(0.25),
                n_jumps: self.features.unwrap_or(4),
                seed,
            },
            ProblemName::Tomo => ProblemSpec::Tomo {
                grid: self.n.unwrap_or(32),
                n_angles: self.angles.unwrap_or(18),
                seed,
            },
            ProblemName::Diag => ProblemSpec::Diag { n: self.n.unwrap_or(10) },
        }
    }
}

/// `auto` means `‖L x_true‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TauArg {
    #[default]
    Auto,
    Value(f64),
}

impl fmt::Display for TauArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauArg::Auto => write!(f, "auto"),
            TauArg::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for TauArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(TauArg::Auto);
        }
        match s.trim().parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(TauArg::Value(v)),
            _ => Err(format!("expected 'auto' or a nonnegative number, got '{s}'")),
        }
    }
}

impl Serialize for TauArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TauArg::Auto => s.serialize_str("auto"),
            TauArg::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TauArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TauArg::Value(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Inner stopping threshold of inexact SR3.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Outer stopping threshold on the relative change of x.
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_inner: usize,
    /// LSQR tolerance of the exact inner solves.
    #[arg(long, default_value_t = 1e-6)]
    pub lsqr_atol: f64,
    /// FISTA iteration cap.
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// FISTA stops once its duality gap reaches this value.
    #[arg(long, default_value_t = 1e-8)]
    pub gap_tol: f64,
    /// Exit with status 3 when a solver does not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sr3,
    Sr3Exact,
    Fista,
    StandardForm,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "sr3")]
    pub method: Method,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Constraint level `auto` or a value.
    #[arg(long, default_value = "auto")]
    pub tau: TauArg,
    /// Solve the penalized problem with this weight instead of the constraint.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ParetoArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Relaxation parameters, `inf` for the original problem.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1,inf")]
    pub kappa: Vec<Kappa>,
    /// Explicit constraint levels; overrides the uniform grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub taus: Option<Vec<f64>>,
    /// Number of points of the uniform grid `(0, tau_max·τ*]`.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Upper end of the uniform grid as a multiple of τ*.
    #[arg(long, default_value_t = 1.2)]
    pub tau_max: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.01,1,100")]
    pub kappa: Vec<Kappa>,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Exact,
    Inexact,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IterationsArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.01,1,100")]
    pub kappa: Vec<Kappa>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value = "auto")]
    pub tau: TauArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A `run.json` written by an earlier run.
    pub manifest: PathBuf,
    /// Output directory; defaults to the manifest's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
