//! Marching-cubes export: the zero level set of a trained field's geometry
//! head, or of the analytic scene when no checkpoint is given.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use srdflab_core::mesh::save_obj;
use srdflab_core::train::{extract_mesh, oracle_mesh, TrainState};

use super::load_scene_arg;
use crate::manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// "ghost", "room", or a scene JSON path.
    #[arg(long, default_value = "room")]
    pub scene: String,
    /// Field checkpoint; omitted meshes the analytic scene.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 96)]
    pub resolution: usize,
    /// Output directory (writes mesh.obj).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args, seed: Option<u64>) -> Result<()> {
    let mut man = manifest::start(&args.out, "mesh", seed, serde_json::to_value(args)?)?;
    let mesh = match &args.checkpoint {
        Some(path) => {
            let state = TrainState::load(path, false)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            extract_mesh(&state.field, args.resolution)?
        }
        None => {
            let scene = load_scene_arg(&args.scene)?;
            oracle_mesh(&scene, args.resolution)?
        }
    };
    let path = args.out.join("mesh.obj");
    save_obj(&mesh, &path)?;
    man.add_output(&path);
    println!(
        "{} vertices, {} faces -> {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        path.display()
    );
    man.finalize()
}
