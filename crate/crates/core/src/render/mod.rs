//! Distance-to-density transforms and the volume-rendering quadrature:
//! alpha compositing of Laplace-CDF densities along rays, depth/normal
//! side channels, stratified + importance sampling, and the oracle weight
//! profile used to contrast SDF and SRDF densities along a single ray.

mod graph;
mod image;

pub use graph::{
    composite_rgb_nodes, density_nodes, quadrature_nodes, weighted_rows_nodes, DensityNodes,
    QuadratureNodes,
};
pub use image::{
    read_pgm16, read_ppm, render_image, write_pgm16, write_ppm, ImageBundle, RenderConfig,
    RenderMode,
};

use crate::ad::{softplus, Tensor};
use crate::geom::Vec3;
use crate::scene::Scene;
use rand::Rng;
use std::io::Write as _;
use std::path::Path;

/// Floor added to softplus(beta_raw) so beta can never reach zero.
pub const BETA_MIN: f64 = 1e-4;
/// Default starting sharpness for both density branches.
pub const BETA_INIT: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("ray from {origin:?} along {dir:?} misses the scene bounds")]
    RayMissesScene { origin: Vec3, dir: Vec3 },
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("image format: {0}")]
    Format(String),
}

/// Learnable density sharpness. The stored tensor is the unconstrained
/// beta_raw; beta = softplus(beta_raw) + BETA_MIN and alpha = 1/beta.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityParams {
    pub beta_raw: Tensor,
}

impl DensityParams {
    /// Construct from a target beta (> BETA_MIN).
    pub fn new(beta: f64) -> DensityParams {
        assert!(beta > BETA_MIN, "beta {beta} must exceed {BETA_MIN}");
        let y = beta - BETA_MIN;
        // Inverse softplus, stable on both ends.
        let raw = if y > 20.0 { y } else { y.exp_m1().ln() };
        DensityParams {
            beta_raw: Tensor::scalar(raw),
        }
    }

    pub fn beta(&self) -> f64 {
        softplus(self.beta_raw.scalar_value()) + BETA_MIN
    }

    pub fn alpha(&self) -> f64 {
        1.0 / self.beta()
    }
}

impl Default for DensityParams {
    fn default() -> DensityParams {
        DensityParams::new(BETA_INIT)
    }
}

/// The SDF branch and SRDF branch each carry their own sharpness unless
/// `tied` points both at the SDF tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    pub sdf: DensityParams,
    pub srdf: DensityParams,
    pub tied: bool,
}

impl DensityPair {
    pub fn new(beta: f64, tied: bool) -> DensityPair {
        DensityPair {
            sdf: DensityParams::new(beta),
            srdf: DensityParams::new(beta),
            tied,
        }
    }

    pub fn srdf_params(&self) -> &DensityParams {
        if self.tied {
            &self.sdf
        } else {
            &self.srdf
        }
    }
}

impl Default for DensityPair {
    fn default() -> DensityPair {
        DensityPair::new(BETA_INIT, false)
    }
}

/// Laplace CDF with zero mean and scale beta.
pub fn laplace_cdf(s: f64, beta: f64) -> f64 {
    if s <= 0.0 {
        0.5 * (s / beta).exp()
    } else {
        1.0 - 0.5 * (-s / beta).exp()
    }
}

/// sigma = alpha * Psi_beta(-d): high inside (d < 0), decaying outside.
pub fn density_from_sdf(d: f64, params: &DensityParams) -> f64 {
    params.alpha() * laplace_cdf(-d, params.beta())
}

/// Identical transform on the signed ray distance, with the SRDF branch's
/// own parameters.
pub fn density_from_srdf(d_ray: f64, params: &DensityParams) -> f64 {
    params.alpha() * laplace_cdf(-d_ray, params.beta())
}

/// Depths and intervals along one ray.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub origin: Vec3,
    pub dir: Vec3,
    pub z: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySamples {
    /// Build from ascending depths; the last interval runs to `far`.
    pub fn from_depths(origin: Vec3, dir: Vec3, z: Vec<f64>, far: f64) -> RaySamples {
        debug_assert!(z.len() >= 2, "need at least two samples");
        let mut delta = Vec::with_capacity(z.len());
        for i in 0..z.len() {
            let next = if i + 1 < z.len() { z[i + 1] } else { far };
            debug_assert!(next > z[i], "depths must be strictly increasing");
            delta.push(next - z[i]);
        }
        RaySamples {
            origin,
            dir,
            z,
            delta,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.z.iter().map(|&t| self.origin + t * self.dir).collect()
    }
}

/// Alpha/transmittance/weight scaffolding for one ray.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub alphas: Vec<f64>,
    pub transmittances: Vec<f64>,
    pub weights: Vec<f64>,
    pub opacity: f64,
}

/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i}(1 - alpha_j)
/// (computed as exp of the exclusive sum so the recorded-graph path and
/// this one agree to rounding), w_i = T_i alpha_i.
pub fn quadrature(sigma: &[f64], delta: &[f64]) -> Quadrature {
    debug_assert_eq!(sigma.len(), delta.len());
    let n = sigma.len();
    let mut alphas = Vec::with_capacity(n);
    let mut transmittances = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut acc: f64 = 0.0; // sum of sigma*delta over j < i
    let mut opacity = 0.0;
    for i in 0..n {
        let sd = sigma[i] * delta[i];
        let alpha = -(-sd).exp_m1();
        let t = (-acc).exp();
        let w = t * alpha;
        alphas.push(alpha);
        transmittances.push(t);
        weights.push(w);
        opacity += w;
        acc += sd;
    }
    Quadrature {
        alphas,
        transmittances,
        weights,
        opacity,
    }
}

pub fn render_color(weights: &[f64], colors: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            out[k] += w * c[k];
        }
    }
    out
}

pub fn render_depth(weights: &[f64], z: &[f64]) -> f64 {
    weights.iter().zip(z).map(|(w, zv)| w * zv).sum()
}

/// Weighted normal: the raw sum feeds the normal loss, the renormalized
/// copy feeds metrics and image output. Zero weight keeps both at zero.
pub fn render_normal(weights: &[f64], normals: &[Vec3]) -> (Vec3, Vec3) {
    let mut raw = Vec3::ZERO;
    for (w, n) in weights.iter().zip(normals) {
        raw = raw + *w * *n;
    }
    let unit = if raw.norm() > 1e-12 {
        raw.normalized()
    } else {
        Vec3::ZERO
    };
    (raw, unit)
}

/// C + (1 - opacity) * background.
pub fn composite_over_background(rgb: [f64; 3], opacity: f64, bg: [f64; 3]) -> [f64; 3] {
    let rest = 1.0 - opacity;
    [
        rgb[0] + rest * bg[0],
        rgb[1] + rest * bg[1],
        rgb[2] + rest * bg[2],
    ]
}

/// How depths along a ray are drawn.
pub enum SampleStrategy<'a> {
    /// `n` depths, one uniform draw inside each of `n` equal bins.
    Stratified(usize),
    /// `fine` extra depths drawn from the inverse CDF of a coarse pass's
    /// weights, merged (sorted) with the coarse depths.
    Importance {
        coarse_z: &'a [f64],
        weights: &'a [f64],
        fine: usize,
    },
}

pub fn sample_ray(near: f64, far: f64, strategy: SampleStrategy, rng: &mut impl Rng) -> Vec<f64> {
    match strategy {
        SampleStrategy::Stratified(n) => stratified_depths(near, far, n, rng),
        SampleStrategy::Importance {
            coarse_z,
            weights,
            fine,
        } => {
            let extra = importance_depths(coarse_z, far, weights, fine, rng);
            merge_depths(coarse_z.to_vec(), extra)
        }
    }
}

pub fn stratified_depths(near: f64, far: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert!(n >= 2 && near < far);
    let span = far - near;
    (0..n)
        .map(|i| near + span * (i as f64 + rng.gen::<f64>()) / n as f64)
        .collect()
}

/// Inverse-CDF resampling over the coarse intervals [z_i, z_{i+1}) (last
/// interval ends at `far`), with mass proportional to weight plus a small
/// floor so empty regions keep nonzero probability.
pub fn importance_depths(
    z: &[f64],
    far: f64,
    weights: &[f64],
    m: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    debug_assert_eq!(z.len(), weights.len());
    let n = z.len();
    let mut cdf = Vec::with_capacity(n + 1);
    let mut total = 0.0;
    cdf.push(0.0);
    for w in weights {
        total += w.max(0.0) + 1e-5;
        cdf.push(total);
    }
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let u = rng.gen::<f64>() * total;
        // First interval whose cumulative mass exceeds u.
        let k = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => (i - 1).min(n - 1),
        };
        let lo = z[k];
        let hi = if k + 1 < n { z[k + 1] } else { far };
        let mass = cdf[k + 1] - cdf[k];
        let frac = if mass > 0.0 { (u - cdf[k]) / mass } else { 0.5 };
        out.push(lo + frac * (hi - lo));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Merge two depth lists into one strictly increasing list, nudging exact
/// collisions apart by a relative epsilon.
pub fn merge_depths(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    a.extend(b);
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for i in 1..a.len() {
        if a[i] <= a[i - 1] {
            a[i] = a[i - 1] + 1e-12 * (1.0 + a[i - 1].abs());
        }
    }
    a
}

/// Indices of local maxima whose value exceeds `frac` of the global
/// maximum. Plateaus count once; endpoints compare one-sided.
pub fn local_maxima_above(values: &[f64], frac: f64) -> Vec<usize> {
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = frac * peak;
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // Walk a plateau of equal values.
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left_ok = i == 0 || values[i - 1] < values[i];
        let right_ok = j + 1 == n || values[j + 1] < values[i];
        if left_ok && right_ok && values[i] > threshold {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Per-sample values along one ray, both density branches side by side.
#[derive(Debug, Clone)]
pub struct WeightProfile {
    pub z: Vec<f64>,
    pub sdf: Vec<f64>,
    pub srdf: Vec<f64>,
    pub sigma_sdf: Vec<f64>,
    pub sigma_srdf: Vec<f64>,
    pub w_sdf: Vec<f64>,
    pub w_srdf: Vec<f64>,
    /// Uniform sample spacing.
    pub delta: f64,
}

/// Evaluate oracle SDF and SRDF densities at N midpoints along a ray
/// through the scene, with alpha = 1/beta.
pub fn oracle_weight_profile(
    scene: &Scene,
    origin: Vec3,
    dir: Vec3,
    beta: f64,
    n: usize,
) -> Result<WeightProfile, RenderError> {
    let dir = dir.normalized();
    let (t0, t1) = scene
        .bounds
        .ray_range(origin, dir)
        .filter(|(t0, t1)| t1 > &0.0 && t0 < t1)
        .ok_or(RenderError::RayMissesScene { origin, dir })?;
    let near = t0.max(0.0);
    let step = (t1 - near) / n as f64;
    let params = DensityParams::new(beta);

    let mut profile = WeightProfile {
        z: Vec::with_capacity(n),
        sdf: Vec::with_capacity(n),
        srdf: Vec::with_capacity(n),
        sigma_sdf: Vec::with_capacity(n),
        sigma_srdf: Vec::with_capacity(n),
        w_sdf: Vec::new(),
        w_srdf: Vec::new(),
        delta: step,
    };
    for i in 0..n {
        let z = near + (i as f64 + 0.5) * step;
        let p = origin + z * dir;
        let d = scene.sdf(p);
        let dr = scene.srdf(p, dir);
        profile.z.push(z);
        profile.sdf.push(d);
        profile.srdf.push(dr);
        profile.sigma_sdf.push(density_from_sdf(d, &params));
        profile.sigma_srdf.push(density_from_srdf(dr, &params));
    }
    let deltas = vec![step; n];
    profile.w_sdf = quadrature(&profile.sigma_sdf, &deltas).weights;
    profile.w_srdf = quadrature(&profile.sigma_srdf, &deltas).weights;
    Ok(profile)
}

impl WeightProfile {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "z,sdf,srdf,sigma_sdf,sigma_srdf,w_sdf,w_srdf")?;
        for i in 0..self.z.len() {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                self.z[i],
                self.sdf[i],
                self.srdf[i],
                self.sigma_sdf[i],
                self.sigma_srdf[i],
                self.w_sdf[i],
                self.w_srdf[i]
            )?;
        }
        f.flush()
    }
}
