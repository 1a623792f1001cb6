//! The ingredient ladder, trained end to end with one shared seed:
//!   a  point-distance density only (the baseline)
//!   b  ray-distance density driving the render
//!   c  b plus the sign-consistency term
//!   d/e/f  c plus visibility supervision, labels from the point-distance
//!          field, the ray-distance field, or only where the two agree
//! Every variant gets its own run directory; the final table compares
//! F-score, chamfer and image fidelity.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use srdflab_core::loss::LossWeights;
use srdflab_core::metrics::MetricsReport;
use srdflab_core::train::{self, DensityMode, TrainConfig, VisibilitySource};

use super::load_scene_arg;
use crate::manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Base JSON training config shared by every variant.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// "ghost", "room", or a scene JSON path.
    #[arg(long, default_value = "room")]
    pub scene: String,
    /// Which variants to run, as a string of letters a-f.
    #[arg(long, default_value = "abcdef")]
    pub variants: String,
    /// Output directory (one variant_<letter> subdirectory each).
    #[arg(long)]
    pub out: PathBuf,
}

/// Base config with everything above the photometric core stripped, then one
/// ingredient added per rung.
pub fn variant(letter: char, base: &TrainConfig) -> Result<(&'static str, TrainConfig)> {
    let defaults = LossWeights::default();
    let mut cfg = base.clone();
    cfg.density_mode = DensityMode::Srdf;
    cfg.weights.consistency = 0.0;
    cfg.weights.visibility = 0.0;
    cfg.visibility = VisibilitySource::Off;
    let name = match letter {
        'a' => {
            cfg.density_mode = DensityMode::Sdf;
            "point-distance baseline"
        }
        'b' => "ray-distance density",
        'c' => {
            cfg.weights.consistency = defaults.consistency;
            "+ sign consistency"
        }
        'd' | 'e' | 'f' => {
            cfg.weights.consistency = defaults.consistency;
            cfg.weights.visibility = defaults.visibility;
            cfg.visibility = match letter {
                'd' => VisibilitySource::Sdf,
                'e' => VisibilitySource::Srdf,
                _ => VisibilitySource::Both,
            };
            match letter {
                'd' => "+ visibility (point labels)",
                'e' => "+ visibility (ray labels)",
                _ => "+ visibility (agreeing labels)",
            }
        }
        other => bail!("unknown variant {other:?} (use letters a-f)"),
    };
    Ok((name, cfg))
}

pub fn run(args: &Args, seed: Option<u64>) -> Result<()> {
    let base = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<TrainConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if args.variants.is_empty() {
        bail!("--variants is empty");
    }
    let scene = load_scene_arg(&args.scene)?;

    let mut man = manifest::start(&args.out, "ablate", seed, serde_json::to_value(args)?)?;
    let mut rows: Vec<(char, &'static str, MetricsReport)> = Vec::new();
    for letter in args.variants.chars() {
        let (name, mut cfg) = variant(letter, &base)?;
        // One seed across the ladder: identical datasets and ray draws, so
        // the rows differ only in the ingredients.
        cfg.seed = seed.unwrap_or(base.seed);
        let dir = args.out.join(format!("variant_{letter}"));
        println!("[{letter}] {name}: training {} iterations", cfg.iterations);
        let report = train::train(&scene, &cfg, &dir, None)
            .with_context(|| format!("variant {letter} ({name})"))?;
        rows.push((letter, name, report));
    }

    let table = args.out.join("table.csv");
    let mut text = String::from("variant,name,fscore,chamfer_l1,psnr_srdf,psnr_sdf\n");
    for (letter, name, report) in &rows {
        text.push_str(&format!(
            "{letter},{name},{},{},{},{}\n",
            report.recon.fscore, report.recon.chamfer_l1, report.psnr_srdf, report.psnr_sdf
        ));
    }
    std::fs::write(&table, &text).with_context(|| format!("writing {}", table.display()))?;

    println!("\n{:<3} {:<32} {:>8} {:>12} {:>10} {:>10}", "", "variant", "fscore", "chamfer_l1", "psnr_srdf", "psnr_sdf");
    for (letter, name, report) in &rows {
        println!(
            "{letter:<3} {name:<32} {:>8.4} {:>12.5} {:>10.3} {:>10.3}",
            report.recon.fscore, report.recon.chamfer_l1, report.psnr_srdf, report.psnr_sdf
        );
    }
    man.add_tree()?;
    man.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_adds_one_ingredient_per_rung() {
        let base = TrainConfig::default();
        let (_, a) = variant('a', &base).unwrap();
        assert_eq!(a.density_mode, DensityMode::Sdf);
        assert_eq!(a.weights.consistency, 0.0);
        assert_eq!(a.weights.visibility, 0.0);
        assert_eq!(a.visibility, VisibilitySource::Off);

        let (_, b) = variant('b', &base).unwrap();
        assert_eq!(b.density_mode, DensityMode::Srdf);
        assert_eq!(b.weights.consistency, 0.0);

        let (_, c) = variant('c', &base).unwrap();
        assert_eq!(c.weights.consistency, LossWeights::default().consistency);
        assert_eq!(c.weights.visibility, 0.0);

        let (_, f) = variant('f', &base).unwrap();
        assert_eq!(f.visibility, VisibilitySource::Both);
        assert_eq!(f.weights.visibility, LossWeights::default().visibility);

        assert!(variant('z', &base).is_err());
    }

    #[test]
    fn rungs_only_touch_the_ladder_knobs() {
        // The base's unrelated settings ride through untouched.
        let base = TrainConfig {
            iterations: 17,
            rays_per_batch: 5,
            ..TrainConfig::default()
        };
        for letter in "abcdef".chars() {
            let (_, cfg) = variant(letter, &base).unwrap();
            assert_eq!(cfg.iterations, 17);
            assert_eq!(cfg.rays_per_batch, 5);
            assert_eq!(cfg.weights.depth, base.weights.depth);
        }
    }
}
