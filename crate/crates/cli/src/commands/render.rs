//! Render one view — from the analytic oracle, or from a checkpoint through
//! both density parameterizations (suffixe-d `_srdf` / `_sdf` so they can be
//! diffed side by side). The camera comes either from explicit flags or from
//! the orbit used to build training datasets, so `--view i --seed s` points
//! at exactly the camera training view i saw.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use srdflab_core::render::{render_image, ImageBundle, RenderConfig, RenderMode};
use srdflab_core::train::{orbit_cameras, OrbitSpec, TrainState};
use srdflab_core::{Camera, Vec3};

use super::{load_scene_arg, parse_vec3};
use crate::manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// "ghost", "room", or a scene JSON path.
    #[arg(long, default_value = "room")]
    pub scene: String,
    /// Field checkpoint; omitted renders the analytic oracle.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Orbit view index (the dataset camera for matching flags and seed).
    #[arg(long, conflicts_with = "eye")]
    pub view: Option<usize>,
    /// Total orbit views the index refers into.
    #[arg(long, default_value_t = 24)]
    pub views: usize,
    #[arg(long, default_value_t = OrbitSpec::default().radius)]
    pub orbit_radius: f64,
    #[arg(long, default_value_t = OrbitSpec::default().elevation)]
    pub orbit_elevation: f64,
    #[arg(long, default_value_t = OrbitSpec::default().jitter)]
    pub orbit_jitter: f64,
    /// Camera position "x,y,z" (alternative to --view).
    #[arg(long, value_parser = parse_vec3)]
    pub eye: Option<Vec3>,
    /// Look-at target "x,y,z"; defaults to the scene bounds center.
    #[arg(long, value_parser = parse_vec3)]
    pub target: Option<Vec3>,
    /// Vertical field of view in radians.
    #[arg(long, default_value_t = OrbitSpec::default().fov_y)]
    pub fov: f64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 96)]
    pub resolution: usize,
    /// Coarse samples per ray (field modes).
    #[arg(long, default_value_t = 64)]
    pub coarse: usize,
    /// Importance samples per ray (field modes).
    #[arg(long, default_value_t = 32)]
    pub fine: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args, seed: Option<u64>) -> Result<()> {
    let scene = load_scene_arg(&args.scene)?;
    let camera = match (args.view, args.eye) {
        (Some(i), _) => {
            if i >= args.views {
                bail!("--view {i} out of range for --views {}", args.views);
            }
            let orbit = OrbitSpec {
                radius: args.orbit_radius,
                elevation: args.orbit_elevation,
                jitter: args.orbit_jitter,
                fov_y: args.fov,
            };
            // Same stream the dataset builder uses, so placements line up.
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            rng.set_stream(0);
            orbit_cameras(&scene, args.views, args.resolution, &orbit, &mut rng)?
                .swap_remove(i)
        }
        (None, Some(eye)) => {
            let target = args.target.unwrap_or_else(|| scene.bounds.center());
            Camera::look_at(eye, target, Vec3::Y, args.fov, args.resolution, args.resolution)?
        }
        (None, None) => bail!("pass either --view or --eye"),
    };

    let mut man = manifest::start(&args.out, "render", seed, serde_json::to_value(args)?)?;
    let cfg = RenderConfig {
        coarse_samples: args.coarse,
        fine_samples: args.fine,
        seed: seed.unwrap_or(0),
        ..RenderConfig::default()
    };

    let save = |bundle: &ImageBundle, suffix: &str, man: &mut manifest::ManifestGuard| -> Result<()> {
        let rgb = args.out.join(format!("rgb{suffix}.ppm"));
        let depth = args.out.join(format!("depth{suffix}.pgm"));
        let normal = args.out.join(format!("normal{suffix}.ppm"));
        bundle.save_color(&rgb)?;
        bundle.save_depth(&depth)?;
        bundle.save_normal(&normal)?;
        for p in [rgb, depth, normal] {
            man.add_output(&p);
        }
        Ok(())
    };

    match &args.checkpoint {
        None => {
            let bundle = render_image(&RenderMode::Oracle { scene: &scene }, &camera, &cfg);
            save(&bundle, "", &mut man)?;
        }
        Some(path) => {
            let state = TrainState::load(path, false)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let srdf = render_image(
                &RenderMode::SrdfDensity {
                    params: &state.field,
                    density: &state.density,
                },
                &camera,
                &cfg,
            );
            save(&srdf, "_srdf", &mut man)?;
            let sdf = render_image(
                &RenderMode::SdfDensity {
                    params: &state.field,
                    density: &state.density,
                },
                &camera,
                &cfg,
            );
            save(&sdf, "_sdf", &mut man)?;
        }
    }
    println!("rendered {}x{} into {}", camera.width, camera.height, args.out.display());
    man.finalize()
}
