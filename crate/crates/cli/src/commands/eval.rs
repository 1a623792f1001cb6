//! Reconstruction metrics between a predicted mesh and either a reference
//! mesh or the analytic scene (whose reference mesh is extracted on demand).
//! Optionally scores image fidelity between two directories of renders.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use srdflab_core::mesh::load_obj;
use srdflab_core::metrics::{
    normal_consistency, psnr_rgb, reconstruction_metrics, sample_mesh, PointCloud,
    DEFAULT_SAMPLES, DEFAULT_TAU,
};
use srdflab_core::render::read_ppm;
use srdflab_core::train::oracle_mesh;

use super::load_scene_arg;
use crate::manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Predicted mesh (OBJ).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference mesh (OBJ). Exactly one of --gt / --scene.
    #[arg(long, conflicts_with = "scene")]
    pub gt: Option<PathBuf>,
    /// Scene whose oracle mesh is the reference.
    #[arg(long)]
    pub scene: Option<String>,
    /// Marching-cubes resolution for the on-demand oracle mesh.
    #[arg(long, default_value_t = 256)]
    pub oracle_resolution: usize,
    /// Distance threshold for precision/recall.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Surface samples per mesh.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// First render directory for PSNR (paired with --images-b by filename).
    #[arg(long, requires = "images_b")]
    pub images_a: Option<PathBuf>,
    /// Second render directory for PSNR.
    #[arg(long, requires = "images_a")]
    pub images_b: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn sampled_cloud(path_desc: &str, mesh: &srdflab_core::mesh::TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    // Fresh rng per cloud: identical meshes then yield identical samples,
    // so self-comparison scores exactly F=1, chamfer=0.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mesh(mesh, n, &mut rng).with_context(|| format!("sampling {path_desc}"))
}

/// PSNR over every same-named PPM pair, pixels pooled across pairs.
fn paired_psnr(dir_a: &Path, dir_b: &Path) -> Result<f64> {
    let mut names: Vec<String> = std::fs::read_dir(dir_a)
        .with_context(|| format!("reading {}", dir_a.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm") && dir_b.join(n).exists())
        .collect();
    names.sort();
    if names.is_empty() {
        bail!(
            "no common .ppm files between {} and {}",
            dir_a.display(),
            dir_b.display()
        );
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for name in &names {
        let (wa, ha, pa) = read_ppm(&dir_a.join(name), 2.2)?;
        let (wb, hb, pb) = read_ppm(&dir_b.join(name), 2.2)?;
        if (wa, ha) != (wb, hb) {
            bail!("{name}: sizes differ ({wa}x{ha} vs {wb}x{hb})");
        }
        a.extend(pa);
        b.extend(pb);
    }
    Ok(psnr_rgb(&a, &b)?)
}

pub fn run(args: &Args, seed: Option<u64>) -> Result<()> {
    let pred_mesh =
        load_obj(&args.pred).with_context(|| format!("loading {}", args.pred.display()))?;
    let gt_mesh = match (&args.gt, &args.scene) {
        (Some(path), None) => {
            load_obj(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(scene)) => {
            let scene = load_scene_arg(scene)?;
            oracle_mesh(&scene, args.oracle_resolution)?
        }
        _ => bail!("pass exactly one of --gt or --scene"),
    };

    let mut man = manifest::start(&args.out, "eval", seed, serde_json::to_value(args)?)?;
    let sample_seed = seed.unwrap_or(0);
    let pred = sampled_cloud("--pred mesh", &pred_mesh, args.samples, sample_seed)?;
    let gt = sampled_cloud("reference mesh", &gt_mesh, args.samples, sample_seed)?;
    let recon = reconstruction_metrics(&pred, &gt, args.tau)?;
    let normals = normal_consistency(&pred, &gt)?;

    let mut report = serde_json::Map::new();
    for (name, value) in [
        ("acc", recon.acc),
        ("comp", recon.comp),
        ("chamfer_l1", recon.chamfer_l1),
        ("prec", recon.prec),
        ("recall", recon.recall),
        ("fscore", recon.fscore),
        ("normal_consistency", normals),
    ] {
        report.insert(name.into(), serde_json::json!(value));
    }
    if let (Some(dir_a), Some(dir_b)) = (&args.images_a, &args.images_b) {
        let psnr = paired_psnr(dir_a, dir_b)?;
        let v = if psnr.is_finite() {
            serde_json::json!(psnr)
        } else {
            serde_json::Value::from("inf")
        };
        report.insert("psnr".into(), v);
    }

    let path = args.out.join("metrics.json");
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(report.clone()))?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    man.add_output(&path);
    for (name, value) in &report {
        println!("{name:<20} {value}");
    }
    man.finalize()
}
