mod args;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};

use sr3_core::io::{read_json, write_json};
use sr3_core::problems::ProblemSpec;

use args::{Cli, Command};
use commands::Outcome;

/// Name of the run manifest written next to every command's outputs.
pub const MANIFEST: &str = "run.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameters; exit status 2.
    Usage(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<sr3_core::Error> for CliError {
    fn from(e: sr3_core::Error) -> Self {
        CliError::Other(e.into())
    }
}

/// Everything needed to reproduce a run. The output directory is not part of
/// it, so a replay into another directory writes identical bytes.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    problem: ProblemSpec,
    seed: u64,
    invocation: Command,
    outputs: Vec<String>,
}

fn execute(mut command: Command) -> Result<Outcome, CliError> {
    if let Command::Replay(replay) = &command {
        let manifest: RunManifest = read_json(&replay.manifest)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", replay.manifest.display())))?;
        let out = match &replay.out {
            Some(dir) => dir.clone(),
            None => replay.manifest.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        };
        let mut inner = manifest.invocation;
        if let Some(slot) = inner.out_mut() {
            *slot = out;
        }
        return execute(inner);
    }

    let problem = command.problem().expect("non-replay commands carry a problem").clone();
    let out = command.out_mut().expect("non-replay commands have an output directory").clone();
    let outcome = match &command {
        Command::Solve(a) => commands::solve(a, &out)?,
        Command::Pareto(a) => commands::pareto(a, &out)?,
        Command::Spectrum(a) => commands::spectrum(a, &out)?,
        Command::Iterations(a) => commands::iterations(a, &out)?,
        Command::Export(a) => commands::export(a, &out)?,
        Command::Replay(_) => unreachable!(),
    };
    let manifest = RunManifest {
        command: command.label().to_owned(),
        problem: problem.spec(),
        seed: problem.seed,
        invocation: command,
        outputs: outcome.outputs.clone(),
    };
    write_json(out.join(MANIFEST), &manifest)?;
    Ok(outcome)
}

fn strict(command: &Command) -> bool {
    match command {
        Command::Solve(a) => a.solver.strict,
        Command::Pareto(a) => a.solver.strict,
        Command::Iterations(a) => a.solver.strict,
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let strict = match &cli.command {
        Command::Replay(r) => read_json::<_, RunManifest>(&r.manifest).map(|m| strict(&m.invocation)).unwrap_or(false),
        other => strict(other),
    };
    match execute(cli.command) {
        Ok(outcome) if strict && !outcome.converged => {
            eprintln!("error: a solver did not converge (--strict)");
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
