//! `srdflab` — experiments over the ray-distance volume rendering lab.
//!
//! Exit codes: 0 success, 2 a property check failed (a method regression),
//! 1 an operational fault (missing file, bad checkpoint, invalid flags'
//! values). clap's own usage errors also exit 2.

mod commands;
mod manifest;
mod plot;

use std::fmt;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Property-check failure: the run completed but the method's promised
/// behavior did not hold. Carries exit code 2 so CI separates these from
/// environment faults.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser)]
#[command(name = "srdflab", version, about = "Ray-distance volume rendering laboratory")]
struct Cli {
    /// Seed override; SRDFLAB_SEED is the fallback, then command defaults.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 = fully serial reproducibility mode, 0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle weight profiles along a probe ray: CSV, plots, peak check.
    Figure1(commands::figure1::Args),
    /// Render a view from the analytic oracle or a trained checkpoint.
    Render(commands::render::Args),
    /// Run the optimization loop from a JSON config.
    Train(commands::train::Args),
    /// Reconstruction metrics against a reference mesh or the scene oracle.
    Eval(commands::eval::Args),
    /// Train the ingredient ladder with a shared seed and tabulate.
    Ablate(commands::ablate::Args),
    /// Export a marching-cubes mesh from a checkpoint or the scene oracle.
    Mesh(commands::mesh::Args),
    /// Load a scene file and run its consistency checks.
    SceneValidate(commands::scene_validate::Args),
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SRDFLAB_SEED") {
        Ok(text) => {
            let seed = text
                .trim()
                .parse()
                .with_context(|| format!("SRDFLAB_SEED {text:?} is not an unsigned integer"))?;
            Ok(Some(seed))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(err) => Err(err).context("reading SRDFLAB_SEED"),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let seed = resolve_seed(cli.seed)?;
    match &cli.command {
        Command::Figure1(args) => commands::figure1::run(args, seed),
        Command::Render(args) => commands::render::run(args, seed),
        Command::Train(args) => commands::train::run(args, seed),
        Command::Eval(args) => commands::eval::run(args, seed),
        Command::Ablate(args) => commands::ablate::run(args, seed),
        Command::Mesh(args) => commands::mesh::run(args, seed),
        Command::SceneValidate(args) => commands::scene_validate::run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<CheckFailed>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
