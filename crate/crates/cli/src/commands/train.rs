//! Run the optimization loop: dataset from the scene oracle, the two-field
//! network, checkpoints, a CSV loss log, final mesh and metrics — everything
//! lands in the run directory next to the manifest.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use srdflab_core::train::{self, TrainConfig};

use super::load_scene_arg;
use crate::manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// JSON training config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// "ghost", "room", or a scene JSON path.
    #[arg(long, default_value = "room")]
    pub scene: String,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the config's iteration count (0 = init + export only).
    #[arg(long)]
    pub iterations: Option<u64>,
}

pub fn run(args: &Args, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            // serde_json errors carry "at line L column C".
            serde_json::from_str::<TrainConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let scene = load_scene_arg(&args.scene)?;

    let snapshot = serde_json::json!({
        "args": serde_json::to_value(args)?,
        "resolved": serde_json::to_value(&cfg)?,
    });
    let mut man = manifest::start(&args.out, "train", seed, snapshot)?;
    let report = train::train(&scene, &cfg, &args.out, args.resume.as_deref())?;
    man.add_tree()?;
    man.finalize()?;
    print!("{}", report.table());
    Ok(())
}
