//! End-to-end optimization: oracle-rendered orbit datasets, minibatch ray
//! sampling, a recorded-graph step through both density branches, Adam
//! updates, CSV logs, checkpoints, and the final mesh plus metric report.
//!
//! Reproducibility contract: (seed, config, scene) fully determine the log
//! and every checkpoint, bit for bit. The dataset draws from stream 0 of the
//! seeded generator and step i draws from stream 1 + i, so a resumed run
//! consumes exactly the randomness the uninterrupted run would have.

mod step;

pub use step::{train_step, StepStats};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{AdError, AdamState, Tensor};
use crate::camera::{Camera, CameraError};
use crate::field::{CheckpointError, FieldParams};
use crate::geom::{Aabb, Vec3};
use crate::loss::{LossError, LossWeights};
use crate::mesh::{marching_cubes, sample_grid, save_obj, MeshError, TriMesh};
use crate::metrics::{
    normal_consistency, psnr_rgb, reconstruction_metrics, sample_mesh, MetricsError,
    MetricsReport, DEFAULT_SAMPLES, DEFAULT_TAU,
};
use crate::render::{
    render_image, DensityPair, DensityParams, RenderConfig, RenderError, RenderMode, BETA_INIT,
};
use crate::scene::Scene;

/// Minimum camera clearance from every surface; pixel rays must not start
/// inside or grazing geometry.
pub const CAMERA_CLEARANCE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("view {view}: camera stayed too close to geometry after {attempts} placement attempts")]
    CameraPlacement { view: usize, attempts: usize },
    #[error("step {step}: {component} loss is not finite{}", dump_note(.dump))]
    NonFinite {
        step: u64,
        component: &'static str,
        dump: Option<PathBuf>,
    },
    #[error("scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn dump_note(dump: &Option<PathBuf>) -> String {
    match dump {
        Some(p) => format!(" (batch dumped to {})", p.display()),
        None => String::new(),
    }
}

/// Where the synthetic cameras sit: a fixed-elevation ring around the scene
/// center with per-view angular jitter, y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Elevation above the orbit plane, radians.
    pub elevation: f64,
    /// Uniform +- jitter applied to azimuth and elevation, radians.
    pub jitter: f64,
    /// Vertical field of view, radians.
    pub fov_y: f64,
}

impl Default for OrbitSpec {
    fn default() -> OrbitSpec {
        OrbitSpec {
            radius: 2.2,
            elevation: 0.35,
            jitter: 0.12,
            fov_y: std::f64::consts::FRAC_PI_3,
        }
    }
}

/// Which branch drives the rendered depth/normals and whether the color term
/// supervises one composited image or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    /// Classic signed-distance density only; the ray-distance branch is left
    /// unsupervised.
    Sdf,
    /// Dual rendering with the ray-distance branch as the primary one.
    Srdf,
}

/// Which field's sign changes drive the self-supervised visibility labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibilitySource {
    /// No labels; the visibility term is logged as zero.
    Off,
    Sdf,
    Srdf,
    /// Labels only where both fields' first sign crossings agree.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Zero is allowed: initialize, checkpoint, export, done.
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub coarse_samples: usize,
    pub fine_samples: usize,
    /// Geometry and color MLP learning rate.
    pub lr_field: f64,
    /// Ray-distance branch learning rate.
    pub lr_srdf: f64,
    /// Density sharpness learning rate.
    pub lr_density: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub views: usize,
    /// Square image side in pixels.
    pub resolution: usize,
    pub orbit: OrbitSpec,
    /// Radius of the sphere the geometry initializes to.
    pub init_radius: f64,
    /// Eikonal samples per step: half drawn uniformly in the bounds, half
    /// subsampled from the batch's ray points.
    pub eikonal_points: usize,
    /// Gradient-smoothness pairs per step (uniform point + ball perturbation).
    pub smooth_points: usize,
    /// Rays per recorded-graph chunk; bounds peak memory, not the losses.
    pub chunk_rays: usize,
    pub density_mode: DensityMode,
    pub visibility: VisibilitySource,
    /// Share one sharpness tensor between the branches.
    pub tie_density: bool,
    pub weights: LossWeights,
    /// Grid resolution for the exported meshes (prediction and oracle).
    pub mesh_resolution: usize,
    /// Leading views rendered for the PSNR report.
    pub eval_views: usize,
    /// Central-difference step for spatial gradients.
    pub grad_step: f64,
    pub near_min: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iterations: 20_000,
            rays_per_batch: 1024,
            coarse_samples: 64,
            fine_samples: 32,
            lr_field: 5e-4,
            lr_srdf: 1e-5,
            lr_density: 5e-4,
            seed: 0,
            checkpoint_every: 5_000,
            views: 24,
            resolution: 96,
            orbit: OrbitSpec::default(),
            init_radius: 0.5,
            eikonal_points: 1024,
            smooth_points: 512,
            chunk_rays: 8,
            density_mode: DensityMode::Srdf,
            visibility: VisibilitySource::Both,
            tie_density: false,
            weights: LossWeights::default(),
            mesh_resolution: 96,
            eval_views: 2,
            grad_step: 1e-3,
            near_min: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.rays_per_batch == 0 {
            return fail("rays_per_batch must be positive".into());
        }
        if self.coarse_samples < 2 {
            return fail(format!(
                "coarse_samples {} must be at least 2",
                self.coarse_samples
            ));
        }
        if !(self.lr_field > 0.0 && self.lr_srdf > 0.0 && self.lr_density > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.views < 2 {
            return fail(format!("views {} must be at least 2", self.views));
        }
        if self.resolution == 0 {
            return fail("resolution must be positive".into());
        }
        if !(self.orbit.radius > 0.0) {
            return fail(format!("orbit radius {} must be > 0", self.orbit.radius));
        }
        if !(self.orbit.fov_y > 0.0 && self.orbit.fov_y < std::f64::consts::PI) {
            return fail(format!("fov_y {} must lie in (0, pi)", self.orbit.fov_y));
        }
        if !(self.init_radius > 0.0) {
            return fail(format!("init_radius {} must be > 0", self.init_radius));
        }
        if self.chunk_rays == 0 {
            return fail("chunk_rays must be positive".into());
        }
        if self.mesh_resolution < 2 {
            return fail(format!(
                "mesh_resolution {} must be at least 2",
                self.mesh_resolution
            ));
        }
        if self.eval_views == 0 || self.eval_views > self.views {
            return fail(format!(
                "eval_views {} must lie in 1..={}",
                self.eval_views, self.views
            ));
        }
        if !(self.grad_step > 0.0) {
            return fail(format!("grad_step {} must be > 0", self.grad_step));
        }
        if !(self.near_min > 0.0) {
            return fail(format!("near_min {} must be > 0", self.near_min));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// One oracle-rendered view: reference color, depth and unit normals plus a
/// foreground mask, all in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
}

/// Cameras on a jittered ring looking at the bounds center. Deterministic
/// per rng state; a placement that stays too close to geometry is
/// re-jittered up to 10 times, then errors.
pub fn orbit_cameras(
    scene: &Scene,
    n_views: usize,
    resolution: usize,
    orbit: &OrbitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Camera>, TrainError> {
    if n_views < 2 {
        return Err(TrainError::Config(format!(
            "views {n_views} must be at least 2"
        )));
    }
    const ATTEMPTS: usize = 10;
    let center = scene.bounds.center();
    let mut cameras = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let base_az = std::f64::consts::TAU * i as f64 / n_views as f64;
        let mut placed = None;
        for _ in 0..ATTEMPTS {
            let az = base_az + orbit.jitter * rng.gen_range(-1.0..1.0);
            let el = orbit.elevation + orbit.jitter * rng.gen_range(-1.0..1.0);
            let eye = center
                + orbit.radius * Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
            if scene.sdf(eye) > CAMERA_CLEARANCE {
                placed = Some(eye);
                break;
            }
        }
        let eye = placed.ok_or(TrainError::CameraPlacement {
            view: i,
            attempts: ATTEMPTS,
        })?;
        cameras.push(Camera::look_at(
            eye,
            center,
            Vec3::Y,
            orbit.fov_y,
            resolution,
            resolution,
        )?);
    }
    Ok(cameras)
}

/// Orbit cameras plus reference maps rendered by the scene oracle.
pub fn make_dataset(
    scene: &Scene,
    n_views: usize,
    resolution: usize,
    orbit: &OrbitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, TrainError> {
    let cameras = orbit_cameras(scene, n_views, resolution, orbit, rng)?;
    Ok(Dataset {
        views: cameras
            .into_iter()
            .map(|camera| render_view(scene, camera))
            .collect(),
    })
}

fn render_view(scene: &Scene, camera: Camera) -> View {
    let npix = camera.pixel_count();
    let w = camera.width;
    let pixels: Vec<([f64; 3], f64, Vec3, bool)> = (0..npix)
        .into_par_iter()
        .map(|p| {
            let (u, v) = (p % w, p / w);
            let (rgb, depth, normal) = scene.oracle_pixel(&camera, u, v);
            let (o, r) = camera.pixel_ray(u, v);
            (rgb, depth, normal, scene.first_surface(o, r).is_some())
        })
        .collect();
    let mut view = View {
        camera,
        rgb: Vec::with_capacity(npix),
        depth: Vec::with_capacity(npix),
        normal: Vec::with_capacity(npix),
        mask: Vec::with_capacity(npix),
    };
    for (rgb, depth, normal, fg) in pixels {
        view.rgb.push(rgb);
        view.depth.push(depth);
        view.normal.push(normal);
        view.mask.push(fg);
    }
    view
}

/// One minibatch of training rays with per-ray integration ranges and the
/// reference pixel values they supervise.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub dirs: Vec<Vec3>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Uniform over (view, pixel) pairs with replacement. Rays that miss the
/// bounds entirely (corner pixels of a wide view) fall back to a
/// diagonal-length range so every ray still integrates something.
pub fn sample_batch(
    dataset: &Dataset,
    bounds: &Aabb,
    n: usize,
    near_min: f64,
    rng: &mut ChaCha8Rng,
) -> RayBatch {
    let mut batch = RayBatch {
        origins: Vec::with_capacity(n),
        dirs: Vec::with_capacity(n),
        near: Vec::with_capacity(n),
        far: Vec::with_capacity(n),
        rgb: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        mask: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let view = &dataset.views[rng.gen_range(0..dataset.views.len())];
        let p = rng.gen_range(0..view.camera.pixel_count());
        let (u, v) = (p % view.camera.width, p / view.camera.width);
        let (o, r) = view.camera.pixel_ray(u, v);
        let (near, far) = match bounds.ray_range(o, r) {
            Some((t0, t1)) if t1 > t0.max(near_min) => (t0.max(near_min), t1),
            _ => (near_min, near_min + bounds.diagonal()),
        };
        batch.origins.push(o);
        batch.dirs.push(r);
        batch.near.push(near);
        batch.far.push(far);
        batch.rgb.push(view.rgb[p]);
        batch.depth.push(view.depth[p]);
        batch.normal.push(view.normal[p]);
        batch.mask.push(view.mask[p]);
    }
    batch
}

/// Everything the optimizer owns. The Adam slot layout is fixed: the field
/// tensors in `tensor_names` order, then the two density sharpness scalars
/// (the second slot never moves when the branches are tied).
#[derive(Debug, Clone)]
pub struct TrainState {
    pub field: FieldParams,
    pub density: DensityPair,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn new(scene: &Scene, cfg: &TrainConfig) -> TrainState {
        let field = FieldParams::init_geometric(scene.bounds, cfg.init_radius, cfg.seed);
        let shapes: Vec<(usize, usize)> = field
            .tensors()
            .iter()
            .map(|t| t.shape())
            .chain([(1, 1), (1, 1)])
            .collect();
        TrainState {
            field,
            density: DensityPair::new(BETA_INIT, cfg.tie_density),
            adam: AdamState::new(&shapes),
            step: 0,
        }
    }

    /// Optimizer group names aligned with the Adam slots.
    pub fn group_names(&self) -> Vec<String> {
        let mut names = self.field.tensor_names();
        names.push("density.sdf.beta_raw".into());
        names.push("density.srdf.beta_raw".into());
        names
    }

    /// Checkpoint with the density scalars and both Adam moments riding
    /// along as extra tensors, so a resumed run continues exactly. A tied
    /// pair stores the live (shared) scalar in both slots, so a loader does
    /// not need to know how the run was configured to read correct betas.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let names = self.group_names();
        let mut extras: Vec<(String, &Tensor)> = vec![
            ("density.sdf.beta_raw".into(), &self.density.sdf.beta_raw),
            (
                "density.srdf.beta_raw".into(),
                &self.density.srdf_params().beta_raw,
            ),
        ];
        for (name, m) in names.iter().zip(&self.adam.m) {
            extras.push((format!("adam.m.{name}"), m));
        }
        for (name, v) in names.iter().zip(&self.adam.v) {
            extras.push((format!("adam.v.{name}"), v));
        }
        self.field.save_checkpoint(path, self.step, &extras)
    }

    pub fn load(path: &Path, tie_density: bool) -> Result<TrainState, TrainError> {
        let (field, step, extras) = FieldParams::load_checkpoint(path)?;
        let lookup = |name: String| -> Result<Tensor, TrainError> {
            extras
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or(TrainError::Config(format!(
                    "checkpoint is missing tensor {name}"
                )))
        };
        let density = DensityPair {
            sdf: DensityParams {
                beta_raw: lookup("density.sdf.beta_raw".into())?,
            },
            srdf: DensityParams {
                beta_raw: lookup("density.srdf.beta_raw".into())?,
            },
            tied: tie_density,
        };
        let mut names = field.tensor_names();
        names.push("density.sdf.beta_raw".into());
        names.push("density.srdf.beta_raw".into());
        let shapes: Vec<(usize, usize)> = field
            .tensors()
            .iter()
            .map(|t| t.shape())
            .chain([(1, 1), (1, 1)])
            .collect();
        let mut adam = AdamState::new(&shapes);
        adam.step = step;
        for (i, name) in names.iter().enumerate() {
            adam.m[i] = lookup(format!("adam.m.{name}"))?;
            adam.v[i] = lookup(format!("adam.v.{name}"))?;
        }
        Ok(TrainState {
            field,
            density,
            adam,
            step,
        })
    }
}

/// Zero-level-set mesh of the field's geometry head, with vertex normals.
pub fn extract_mesh(field: &FieldParams, resolution: usize) -> Result<TriMesh, MeshError> {
    let grid = sample_grid(
        |pts| field.eval_sdf(pts),
        &field.bounds,
        (resolution, resolution, resolution),
    )?;
    let mut mesh = marching_cubes(&grid, 0.0)?;
    mesh.compute_vertex_normals();
    Ok(mesh)
}

/// Oracle zero-level-set mesh on the scene bounds at the same resolution.
pub fn oracle_mesh(scene: &Scene, resolution: usize) -> Result<TriMesh, MeshError> {
    let grid = sample_grid(
        |pts| pts.iter().map(|&p| scene.sdf(p)).collect(),
        &scene.bounds,
        (resolution, resolution, resolution),
    )?;
    let mut mesh = marching_cubes(&grid, 0.0)?;
    mesh.compute_vertex_normals();
    Ok(mesh)
}

/// Reconstruction metrics of the predicted mesh against the oracle mesh,
/// plus PSNR of both density branches over the leading `eval_views` views.
pub fn evaluate(
    scene: &Scene,
    state: &TrainState,
    dataset: &Dataset,
    cfg: &TrainConfig,
    pred_mesh: &TriMesh,
) -> Result<MetricsReport, TrainError> {
    let gt_mesh = oracle_mesh(scene, cfg.mesh_resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pred_cloud = sample_mesh(pred_mesh, DEFAULT_SAMPLES, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gt_cloud = sample_mesh(&gt_mesh, DEFAULT_SAMPLES, &mut rng)?;
    let recon = reconstruction_metrics(&pred_cloud, &gt_cloud, DEFAULT_TAU)?;
    let nc = normal_consistency(&pred_cloud, &gt_cloud)?;

    let render_cfg = RenderConfig {
        coarse_samples: cfg.coarse_samples,
        fine_samples: cfg.fine_samples,
        near_min: cfg.near_min,
        seed: cfg.seed,
        grad_step: cfg.grad_step,
        ..RenderConfig::default()
    };
    let mut truth = Vec::new();
    let mut srdf_px = Vec::new();
    let mut sdf_px = Vec::new();
    for view in dataset.views.iter().take(cfg.eval_views) {
        truth.extend_from_slice(&view.rgb);
        let srdf_img = render_image(
            &RenderMode::SrdfDensity {
                params: &state.field,
                density: &state.density,
            },
            &view.camera,
            &render_cfg,
        );
        srdf_px.extend(srdf_img.rgb);
        let sdf_img = render_image(
            &RenderMode::SdfDensity {
                params: &state.field,
                density: &state.density,
            },
            &view.camera,
            &render_cfg,
        );
        sdf_px.extend(sdf_img.rgb);
    }
    Ok(MetricsReport {
        recon,
        normal_consistency: nc,
        psnr_srdf: psnr_rgb(&srdf_px, &truth)?,
        psnr_sdf: psnr_rgb(&sdf_px, &truth)?,
    })
}

const LOG_HEADER: &str = "step,rgb,depth,normal,eikonal,smooth,consistency,visibility,total,\
                          disagreeing,labeled_fraction,beta_sdf,beta_srdf,w,q";

/// Full run under `run_dir`: {config.json, log.csv, ckpt_*.bin,
/// mesh_final.obj, metrics.json}. `resume` continues from a checkpoint,
/// appending to an existing log when the directory is reused.
pub fn train(
    scene: &Scene,
    cfg: &TrainConfig,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<MetricsReport, TrainError> {
    cfg.validate()?;
    scene.validate().map_err(TrainError::Scene)?;
    fs::create_dir_all(run_dir)?;
    fs::write(
        run_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let dataset = make_dataset(scene, cfg.views, cfg.resolution, &cfg.orbit, &mut rng)?;

    let mut state = match resume {
        Some(ckpt) => TrainState::load(ckpt, cfg.tie_density)?,
        None => TrainState::new(scene, cfg),
    };

    let log_path = run_dir.join("log.csv");
    let append = resume.is_some() && log_path.exists();
    let mut log = BufWriter::new(if append {
        fs::OpenOptions::new().append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    });
    if !append {
        writeln!(log, "{LOG_HEADER}")?;
    }

    let ckpt_path = |step: u64| run_dir.join(format!("ckpt_{step:06}.bin"));
    if resume.is_none() {
        state.save(&ckpt_path(0))?;
    }

    while state.step < cfg.iterations {
        let mut step_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        step_rng.set_stream(1 + state.step);
        let batch = sample_batch(
            &dataset,
            &scene.bounds,
            cfg.rays_per_batch,
            cfg.near_min,
            &mut step_rng,
        );
        let stats = train_step(&mut state, &batch, cfg, &mut step_rng, Some(run_dir))?;
        writeln!(log, "{}", stats.csv_row(state.step))?;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            log.flush()?;
            state.save(&ckpt_path(state.step))?;
        }
    }
    log.flush()?;
    let final_ckpt = ckpt_path(state.step);
    if !final_ckpt.exists() {
        state.save(&final_ckpt)?;
    }

    let pred_mesh = extract_mesh(&state.field, cfg.mesh_resolution)?;
    save_obj(&pred_mesh, &run_dir.join("mesh_final.obj"))?;

    let report = evaluate(scene, &state, &dataset, cfg, &pred_mesh)?;
    fs::write(
        run_dir.join("metrics.json"),
        report.to_json().to_string() + "\n",
    )?;
    Ok(report)
}
