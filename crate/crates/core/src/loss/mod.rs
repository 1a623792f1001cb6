//! Training objectives: the dual color loss (one term per density branch),
//! scale/shift-aligned depth, raw-normal supervision, Eikonal and
//! gradient-smoothness regularizers, the sign-consistency penalty tying the
//! ray distance to the signed distance, and self-supervised visibility
//! labeling with a binary cross-entropy loss on the predicted logits.

mod graph;

pub use graph::{
    consistency_loss_nodes, depth_loss_nodes, eikonal_loss_nodes, normal_loss_nodes,
    rgb_loss_nodes, smooth_loss_nodes, total_loss_nodes, visibility_loss_nodes, LossNodes,
};

use crate::ad::{sigmoid, softplus};
use crate::field::FieldParams;
use crate::geom::Vec3;
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{component} loss is not finite (got {value})")]
    NonFinite { component: &'static str, value: f64 },
    #[error("loss configuration: {0}")]
    Config(String),
}

/// Multipliers for the composite objective plus the two shape hyperparameters
/// that travel with them. The color term is implicitly weighted 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub visibility: f64,
    /// Slope k of the sigmoid standing in for the sign function.
    pub sign_slope: f64,
    /// Radius of the perturbation ball for the gradient-smoothness term.
    pub smooth_radius: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            depth: 0.1,
            normal: 0.05,
            eikonal: 0.05,
            smooth: 0.005,
            consistency: 1.0,
            visibility: 0.001,
            sign_slope: 12.0,
            smooth_radius: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let lambdas = [
            ("depth", self.depth),
            ("normal", self.normal),
            ("eikonal", self.eikonal),
            ("smooth", self.smooth),
            ("consistency", self.consistency),
            ("visibility", self.visibility),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::Config(format!("{name} weight {v} must be >= 0")));
            }
        }
        if !(self.sign_slope > 0.0) {
            return Err(LossError::Config(format!(
                "sign slope {} must be > 0",
                self.sign_slope
            )));
        }
        if !(self.smooth_radius > 0.0) {
            return Err(LossError::Config(format!(
                "smooth radius {} must be > 0",
                self.smooth_radius
            )));
        }
        Ok(())
    }
}

/// Per-component values of one objective evaluation, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub visibility: f64,
}

impl LossBreakdown {
    /// Fixed-order view used for finiteness checks and the training log.
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("rgb", self.rgb),
            ("depth", self.depth),
            ("normal", self.normal),
            ("eikonal", self.eikonal),
            ("smooth", self.smooth),
            ("consistency", self.consistency),
            ("visibility", self.visibility),
        ]
    }
}

/// Weighted sum of the components. Errs on any non-finite component so a
/// diverging run fails loudly, naming the term that blew up.
pub fn total_loss(parts: &LossBreakdown, weights: &LossWeights) -> Result<f64, LossError> {
    for (component, value) in parts.named() {
        if !value.is_finite() {
            return Err(LossError::NonFinite { component, value });
        }
    }
    Ok(parts.rgb
        + weights.depth * parts.depth
        + weights.normal * parts.normal
        + weights.eikonal * parts.eikonal
        + weights.smooth * parts.smooth
        + weights.consistency * parts.consistency
        + weights.visibility * parts.visibility)
}

/// Dual color reconstruction loss: per-ray l1 against the reference for the
/// SRDF-density rendering plus the same for the SDF-density rendering, both
/// divided by `batch_rays` (the minibatch ray count, not the slice length,
/// so chunked evaluation sums to the full-batch value).
pub fn rgb_loss(
    c_srdf: &[[f64; 3]],
    c_sdf: &[[f64; 3]],
    c_true: &[[f64; 3]],
    batch_rays: usize,
) -> f64 {
    assert_eq!(c_srdf.len(), c_true.len());
    assert_eq!(c_sdf.len(), c_true.len());
    let l1 = |a: &[[f64; 3]]| -> f64 {
        a.iter()
            .zip(c_true)
            .map(|(x, t)| (x[0] - t[0]).abs() + (x[1] - t[1]).abs() + (x[2] - t[2]).abs())
            .sum()
    };
    (l1(c_srdf) + l1(c_sdf)) / batch_rays.max(1) as f64
}

/// Least-squares scale/shift aligning rendered depths to reference depths:
/// (w, q) minimizing sum((w D + q - D_ref)^2). Degenerate inputs (fewer than
/// two rays, or all rendered depths equal) fall back to w = 1 and the mean
/// offset, which keeps the subsequent depth loss well defined.
pub fn depth_align(depth: &[f64], depth_true: &[f64]) -> (f64, f64) {
    assert_eq!(depth.len(), depth_true.len());
    let n = depth.len() as f64;
    if depth.is_empty() {
        return (1.0, 0.0);
    }
    let mean_d = depth.iter().sum::<f64>() / n;
    let mean_t = depth_true.iter().sum::<f64>() / n;
    // Centered normal equations: immune to a large common offset.
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&d, &t) in depth.iter().zip(depth_true) {
        cov += (d - mean_d) * (t - mean_t);
        var += (d - mean_d) * (d - mean_d);
    }
    if var <= f64::EPSILON * n * (1.0 + mean_d * mean_d) {
        return (1.0, mean_t - mean_d);
    }
    let w = cov / var;
    (w, mean_t - w * mean_d)
}

/// Depth loss on foreground rays: mean-free l2 residual |w D + q - D_ref| per
/// ray, summed and divided by `batch_rays`. Callers pass only foreground rays
/// in the slices; the normalizer stays the full minibatch ray count.
pub fn depth_loss(
    depth: &[f64],
    depth_true: &[f64],
    w: f64,
    q: f64,
    batch_rays: usize,
) -> f64 {
    assert_eq!(depth.len(), depth_true.len());
    let sum: f64 = depth
        .iter()
        .zip(depth_true)
        .map(|(&d, &t)| (w * d + q - t).abs())
        .sum();
    sum / batch_rays.max(1) as f64
}

/// Normal loss on foreground rays: per-ray l1 distance plus the angular term
/// |1 - N . N_ref|, where N is the raw rendered normal sum (not unit) and
/// N_ref is unit. Divided by `batch_rays` as in the depth loss.
pub fn normal_loss(normal: &[Vec3], normal_true: &[Vec3], batch_rays: usize) -> f64 {
    assert_eq!(normal.len(), normal_true.len());
    let sum: f64 = normal
        .iter()
        .zip(normal_true)
        .map(|(&n, &t)| (n - t).norm_l1() + (1.0 - n.dot(t)).abs())
        .sum();
    sum / batch_rays.max(1) as f64
}

/// Mean of (|grad| - 1)^2 over a set of spatial gradients.
pub fn eikonal_from_gradients(gradients: &[Vec3]) -> f64 {
    if gradients.is_empty() {
        return 0.0;
    }
    gradients
        .iter()
        .map(|g| (g.norm() - 1.0).powi(2))
        .sum::<f64>()
        / gradients.len() as f64
}

/// Eikonal regularizer of the signed-distance head at the given points,
/// with gradients taken by central differences of step `h`.
pub fn eikonal_loss(field: &FieldParams, points: &[Vec3], h: f64) -> f64 {
    eikonal_from_gradients(&field.spatial_gradient(points, h))
}

/// Mean l2 distance between paired gradient samples.
pub fn smooth_loss_from_gradients(at_points: &[Vec3], at_shifted: &[Vec3]) -> f64 {
    assert_eq!(at_points.len(), at_shifted.len());
    if at_points.is_empty() {
        return 0.0;
    }
    at_points
        .iter()
        .zip(at_shifted)
        .map(|(&a, &b)| (a - b).norm())
        .sum::<f64>()
        / at_points.len() as f64
}

/// Offsets drawn uniformly from the ball of the given radius, by rejection
/// from the enclosing cube (acceptance ~52%, exact distribution).
pub fn ball_perturbations(count: usize, radius: f64, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..count)
        .map(|_| loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
            );
            if v.norm_squared() <= 1.0 {
                break v * radius;
            }
        })
        .collect()
}

/// Gradient-smoothness regularizer: mean l2 difference between the SDF
/// gradient at each point and at a perturbed point drawn uniformly from a
/// ball of radius `radius` around it. One batched gradient evaluation
/// serves both halves.
pub fn smooth_loss(
    field: &FieldParams,
    points: &[Vec3],
    radius: f64,
    h: f64,
    rng: &mut impl Rng,
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let eps = ball_perturbations(points.len(), radius, rng);
    let mut all = Vec::with_capacity(points.len() * 2);
    all.extend_from_slice(points);
    all.extend(points.iter().zip(&eps).map(|(&p, &e)| p + e));
    let grads = field.spatial_gradient(&all, h);
    smooth_loss_from_gradients(&grads[..points.len()], &grads[points.len()..])
}

/// Differentiable sign surrogate: sigmoid(k d), in (0, 1), crossing 0.5 at
/// the surface.
pub fn approx_sign(d: f64, k: f64) -> f64 {
    sigmoid(k * d)
}

/// Derivative of `approx_sign` with respect to d: k s (1 - s).
pub fn approx_sign_deriv(d: f64, k: f64) -> f64 {
    let s = sigmoid(k * d);
    k * s * (1.0 - s)
}

/// Indicator of sign disagreement between paired ray-distance and
/// signed-distance predictions: true where their product is negative.
pub fn consistency_mask(srdf: &[f64], sdf: &[f64]) -> Vec<bool> {
    assert_eq!(srdf.len(), sdf.len());
    srdf.iter()
        .zip(sdf)
        .map(|(&a, &b)| a * b < 0.0)
        .collect()
}

/// Sign-consistency penalty: squared difference of the soft signs, averaged
/// over the disagreeing pairs only (zero when every pair agrees). The square
/// keeps the penalty graded by how far apart the soft signs are, and its
/// derivative vanishes as both predictions saturate.
pub fn consistency_loss(srdf: &[f64], sdf: &[f64], k: f64) -> f64 {
    assert_eq!(srdf.len(), sdf.len());
    let mut sum = 0.0;
    let mut disagreeing = 0usize;
    for (&a, &b) in srdf.iter().zip(sdf) {
        if a * b < 0.0 {
            let diff = approx_sign(a, k) - approx_sign(b, k);
            sum += diff * diff;
            disagreeing += 1;
        }
    }
    if disagreeing == 0 {
        0.0
    } else {
        sum / disagreeing as f64
    }
}

/// Closed-form derivative of the single-pair consistency penalty with
/// respect to the signed-distance value (mask frozen, one disagreeing pair):
/// -2 (s(d_ray) - s(d)) s'(d). The magnitude is 2 |s(d_ray) - s(d)| s'(d);
/// the sign pushes d toward the sign of the ray distance, so it is negative
/// exactly when the ray distance is the positive one.
pub fn consistency_grad_oracle(srdf: f64, sdf: f64, k: f64) -> f64 {
    -2.0 * (approx_sign(srdf, k) - approx_sign(sdf, k)) * approx_sign_deriv(sdf, k)
}

/// Index i of the first adjacent sign change (values[i] * values[i+1] <= 0)
/// in a depth-ordered sequence, or None when the sign never changes. An
/// exact zero counts as a change: the surface sits on the sample.
pub fn first_crossing(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| w[0] * w[1] <= 0.0)
}

/// Per-sample visibility labels for one ray. Both fields vote: samples up to
/// (and including) each field's first crossing index are visible for that
/// field, the rest occluded. A sample is labeled only when the votes agree;
/// disagreements are excluded from the loss. Labels are produced from plain
/// values, so nothing here feeds back into the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityLabels {
    /// 1.0 visible / 0.0 occluded; only meaningful where `labeled`.
    pub labels: Vec<f64>,
    pub labeled: Vec<bool>,
}

impl VisibilityLabels {
    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&m| m).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.labeled.is_empty() {
            0.0
        } else {
            self.labeled_count() as f64 / self.labeled.len() as f64
        }
    }

    /// Concatenate another ray's labels onto this batch.
    pub fn append(&mut self, other: &VisibilityLabels) {
        self.labels.extend_from_slice(&other.labels);
        self.labeled.extend_from_slice(&other.labeled);
    }

    pub fn empty() -> VisibilityLabels {
        VisibilityLabels {
            labels: Vec::new(),
            labeled: Vec::new(),
        }
    }
}

/// Label one depth-sorted ray from its ray-distance and signed-distance
/// sequences (see `VisibilityLabels` for the agreement rule).
pub fn visibility_labels(srdf: &[f64], sdf: &[f64]) -> VisibilityLabels {
    assert_eq!(srdf.len(), sdf.len());
    let n = srdf.len();
    // visible_until = index of the last visible sample for one field's vote;
    // everything after the first crossing is occluded, no crossing means the
    // whole ray is visible.
    let visible_until = |vals: &[f64]| first_crossing(vals).unwrap_or(n);
    let a = visible_until(srdf);
    let b = visible_until(sdf);
    let mut labels = vec![0.0; n];
    let mut labeled = vec![false; n];
    for i in 0..n {
        let vis_a = i <= a;
        let vis_b = i <= b;
        if vis_a == vis_b {
            labeled[i] = true;
            labels[i] = if vis_a { 1.0 } else { 0.0 };
        }
    }
    VisibilityLabels { labels, labeled }
}

/// Numerically stable binary cross-entropy from a logit:
/// softplus(l) - y l = -y log s(l) - (1 - y) log(1 - s(l)).
pub fn binary_cross_entropy(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// Mean binary cross-entropy of the visibility logits over the labeled
/// samples; zero when nothing is labeled.
pub fn visibility_loss(logits: &[f64], labels: &VisibilityLabels) -> f64 {
    assert_eq!(logits.len(), labels.labels.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&l, &y), &m) in logits.iter().zip(&labels.labels).zip(&labels.labeled) {
        if m {
            sum += binary_cross_entropy(l, y);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sharp_softplus, FieldParams, GRAD_STEP};
    use crate::geom::Aabb;
    use crate::scene::Scene;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Field whose SDF is exactly `slope * p.z`: layer 0 stores z + 10 in
    /// unit 0 (the shift keeps every later sharp-softplus on its linear
    /// branch to machine precision), the head scales and removes the shift.
    fn linear_z_field(slope: f64) -> FieldParams {
        let mut params = FieldParams::empty(Aabb::new(
            Vec3::splat(-20.0),
            Vec3::splat(20.0),
        ));
        params.geo_layers[0].w.set(2, 0, 1.0); // raw z input is column 2
        params.geo_layers[0].b.set(0, 0, 10.0);
        for layer in &mut params.geo_layers[1..] {
            layer.w.set(0, 0, 1.0);
        }
        params.geo_sdf.w.set(0, 0, slope);
        params.geo_sdf.b.set(0, 0, -10.0 * slope);
        params
    }

    #[test]
    fn default_weights_validate() {
        let w = LossWeights::default();
        assert!(w.validate().is_ok());
        assert_eq!(w.depth, 0.1);
        assert_eq!(w.normal, 0.05);
        assert_eq!(w.eikonal, 0.05);
        assert_eq!(w.smooth, 0.005);
        assert_eq!(w.consistency, 1.0);
        assert_eq!(w.visibility, 0.001);
        assert_eq!(w.sign_slope, 12.0);
        assert_eq!(w.smooth_radius, 0.01);
    }

    #[test]
    fn bad_weights_are_rejected() {
        let mut w = LossWeights::default();
        w.depth = -0.1;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.sign_slope = 0.0;
        assert!(w.validate().is_err());
        let mut w = LossWeights::default();
        w.smooth_radius = -1.0;
        assert!(w.validate().is_err());
    }

    #[test]
    fn rgb_loss_zero_on_perfect_and_linear_in_error() {
        let truth = vec![[0.2, 0.5, 0.9], [0.0, 1.0, 0.5]];
        assert_eq!(rgb_loss(&truth, &truth, &truth, 2), 0.0);

        // One channel off by 0.1 on one ray, the other branch exact.
        let mut off = truth.clone();
        off[0][1] += 0.1;
        let loss = rgb_loss(&off, &truth, &truth, 1);
        assert!((loss - 0.1).abs() < 1e-15);
        // Normalizing by a larger batch scales it down.
        let loss4 = rgb_loss(&off, &truth, &truth, 4);
        assert!((loss4 - 0.025).abs() < 1e-15);
    }

    #[test]
    fn rgb_loss_is_symmetric_in_the_branches() {
        let truth = vec![[0.3, 0.3, 0.3]];
        let off = vec![[0.4, 0.25, 0.3]];
        let a = rgb_loss(&off, &truth, &truth, 1);
        let b = rgb_loss(&truth, &off, &truth, 1);
        assert_eq!(a, b);
    }

    #[test]
    fn depth_align_recovers_exact_scale_and_shift() {
        let (w, q) = depth_align(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert!((w - 2.0).abs() < 1e-12 && q.abs() < 1e-12);

        let d = [0.7, 1.3, 2.9];
        let (w, q) = depth_align(&d, &d);
        assert!((w - 1.0).abs() < 1e-12 && q.abs() < 1e-12);

        let (w, q) = depth_align(&[1.0, 2.0], &[3.0, 4.0]);
        assert!((w - 1.0).abs() < 1e-12 && (q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn depth_align_degenerate_falls_back_to_shift() {
        let (w, q) = depth_align(&[2.0, 2.0, 2.0], &[1.0, 2.0, 6.0]);
        assert_eq!(w, 1.0);
        assert!((q - 1.0).abs() < 1e-12); // mean(D_ref) - 2 = 3 - 2

        let (w, q) = depth_align(&[], &[]);
        assert_eq!((w, q), (1.0, 0.0));
    }

    #[test]
    fn depth_align_is_scale_shift_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let d: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..6.0)).collect();
            let a = rng.gen_range(-3.0..3.0_f64);
            let b = rng.gen_range(-5.0..5.0);
            if a.abs() < 1e-3 {
                continue;
            }
            let t: Vec<f64> = d.iter().map(|&x| a * x + b).collect();
            let (w, q) = depth_align(&d, &t);
            assert!((w - a).abs() < 1e-9, "w {w} vs {a}");
            assert!((q - b).abs() < 1e-9, "q {q} vs {b}");
        }
    }

    #[test]
    fn depth_loss_values() {
        let d = [1.0, 2.0];
        let t = [2.0, 3.0];
        assert_eq!(depth_loss(&d, &t, 1.0, 1.0, 2), 0.0);
        assert!((depth_loss(&[1.0], &[2.0], 1.0, 0.0, 1) - 1.0).abs() < 1e-15);
        // Doubling every residual doubles the loss.
        let base = depth_loss(&d, &t, 1.0, 0.5, 2);
        let twice = depth_loss(&d, &t, 1.0, 0.0, 2); // residuals 1.0 vs 0.5
        assert!((twice - 2.0 * base).abs() < 1e-15);
    }

    #[test]
    fn normal_loss_values() {
        let n = [Vec3::new(0.0, 0.0, 1.0)];
        assert_eq!(normal_loss(&n, &n, 1), 0.0);

        // Anti-aligned: l1 part 2 |N|_1, angular part |1 - (-1)| = 2.
        let t = [Vec3::new(0.6, 0.0, 0.8)];
        let flipped = [Vec3::new(-0.6, 0.0, -0.8)];
        let expect = 2.0 * (0.6 + 0.8) + 2.0;
        assert!((normal_loss(&flipped, &t, 1) - expect).abs() < 1e-12);

        // Orthogonal unit normals: angular term is exactly 1.
        let x = [Vec3::new(1.0, 0.0, 0.0)];
        let y = [Vec3::new(0.0, 1.0, 0.0)];
        assert!((normal_loss(&x, &y, 1) - (2.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn eikonal_loss_on_constructed_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec3> = (0..24)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();

        // d(p) = p.z is a true distance function: loss ~ 0.
        let plane = linear_z_field(1.0);
        assert!(eikonal_loss(&plane, &points, GRAD_STEP) < 1e-6);

        // d(p) = 2 p.z has |grad| = 2 everywhere: loss = 1.
        let steep = linear_z_field(2.0);
        assert!((eikonal_loss(&steep, &points, GRAD_STEP) - 1.0).abs() < 1e-9);

        // Constant zero field: |grad| = 0, loss = 1.
        let flat = FieldParams::empty(Aabb::new(Vec3::splat(-20.0), Vec3::splat(20.0)));
        assert_eq!(eikonal_loss(&flat, &points, GRAD_STEP), 1.0);
    }

    #[test]
    fn smooth_loss_on_linear_field_is_noise() {
        let field = linear_z_field(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec3> = (0..16)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let loss = smooth_loss(&field, &points, 0.01, GRAD_STEP, &mut rng);
        assert!(loss < 1e-9, "constant gradient should be smooth, got {loss}");

        // Zero perturbation radius compares a point against itself.
        let zero = smooth_loss(&field, &points, 0.0, GRAD_STEP, &mut rng);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn smooth_loss_matches_quadratic_hand_value() {
        // For d(p) = |p|^2 the gradient is 2p, so the per-point difference
        // of gradients at p and p + eps has norm 2 |eps| regardless of p.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec3> = (0..32)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let eps = ball_perturbations(points.len(), 0.01, &mut rng);
        let g_p: Vec<Vec3> = points.iter().map(|&p| 2.0 * p).collect();
        let g_q: Vec<Vec3> = points.iter().zip(&eps).map(|(&p, &e)| 2.0 * (p + e)).collect();
        let expect: f64 =
            eps.iter().map(|e| 2.0 * e.norm()).sum::<f64>() / points.len() as f64;
        let got = smooth_loss_from_gradients(&g_p, &g_q);
        assert!((got - expect).abs() < 1e-12);
        assert!(got > 0.0 && got <= 0.02 + 1e-12);
    }

    #[test]
    fn ball_perturbations_stay_in_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = ball_perturbations(500, 0.25, &mut rng);
        assert_eq!(eps.len(), 500);
        assert!(eps.iter().all(|e| e.norm() <= 0.25 + 1e-12));
        // Not degenerate: some samples land beyond half the radius.
        assert!(eps.iter().any(|e| e.norm() > 0.125));
    }

    #[test]
    fn approx_sign_matches_pinned_values() {
        for k in [1.0, 12.0, 30.0] {
            assert_eq!(approx_sign(0.0, k), 0.5);
        }
        // k = 12, d = +-0.5: sigmoid(+-6).
        assert!((approx_sign(0.5, 12.0) - 0.9975273768433653).abs() < 1e-15);
        assert!((approx_sign(-0.5, 12.0) - 0.0024726231566347743).abs() < 1e-15);
        // Antisymmetry and monotonicity.
        for d in [0.03, 0.4, 1.7] {
            let hi = approx_sign(d, 12.0);
            let lo = approx_sign(-d, 12.0);
            assert!((hi + lo - 1.0).abs() < 1e-12);
            assert!(hi > 0.5 && lo < 0.5);
        }
        assert!(approx_sign(0.2, 12.0) < approx_sign(0.3, 12.0));
    }

    #[test]
    fn approx_sign_deriv_peaks_at_surface() {
        assert_eq!(approx_sign_deriv(0.0, 12.0), 3.0); // k/4
        assert!(approx_sign_deriv(0.1, 12.0) < 3.0);
        assert!(approx_sign_deriv(5.0, 12.0) < 1e-20);
        // Matches a central difference of approx_sign.
        let h = 1e-6;
        let fd = (approx_sign(0.2 + h, 12.0) - approx_sign(0.2 - h, 12.0)) / (2.0 * h);
        assert!((approx_sign_deriv(0.2, 12.0) - fd).abs() < 1e-8);
    }

    #[test]
    fn consistency_loss_pinned_pair() {
        // Agreeing pairs contribute nothing.
        assert_eq!(consistency_loss(&[0.4, -0.2], &[0.1, -0.9], 12.0), 0.0);

        // One disagreeing pair at (0.5, -0.5): (sigmoid(6) - sigmoid(-6))^2.
        let loss = consistency_loss(&[0.5], &[-0.5], 12.0);
        assert!((loss - 0.99013396283456).abs() < 1e-10, "got {loss}");

        // Mixed batch: mean over the two disagreeing pairs only.
        let srdf = [0.5, 0.3, -0.5];
        let sdf = [-0.5, 0.2, 0.5];
        let per = consistency_loss(&[0.5], &[-0.5], 12.0);
        let got = consistency_loss(&srdf, &sdf, 12.0);
        assert!((got - per).abs() < 1e-12); // symmetric pair has the same value
        let mask = consistency_mask(&srdf, &sdf);
        assert_eq!(mask, vec![true, false, true]);
    }

    #[test]
    fn consistency_loss_vanishes_at_the_surface() {
        let mut prev = f64::INFINITY;
        for zeta in [1e-2, 1e-4, 1e-6] {
            let loss = consistency_loss(&[zeta], &[-zeta], 12.0);
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-9);
    }

    #[test]
    fn consistency_grad_oracle_pinned_values() {
        // Pair (0.5, -0.5), k = 12: -2 |s(6) - s(-6)| * 12 s(-6)(1 - s(-6)).
        let g = consistency_grad_oracle(0.5, -0.5, 12.0);
        assert!((g - -0.058903483089127316).abs() < 1e-15, "got {g}");
        assert!((g - -0.058902).abs() < 5e-6); // matches the 6-digit hand value

        // Saturation kills the gradient far from the surface.
        assert!(consistency_grad_oracle(3.0, -3.0, 12.0).abs() < 1e-13);
        // Closed form against the analytic pieces.
        let by_hand = -2.0
            * (approx_sign(0.5, 12.0) - approx_sign(-0.5, 12.0)).abs()
            * approx_sign_deriv(-0.5, 12.0);
        assert_eq!(g, by_hand);
    }

    #[test]
    fn first_crossing_rules() {
        assert_eq!(first_crossing(&[0.5, 0.2, -0.1, -0.3]), Some(1));
        assert_eq!(first_crossing(&[0.5, -0.1]), Some(0));
        assert_eq!(first_crossing(&[0.5, 0.2, 0.1]), None);
        // An exact zero counts as the crossing.
        assert_eq!(first_crossing(&[0.5, 0.0, -0.3]), Some(0));
        assert_eq!(first_crossing(&[1.0]), None);
        assert_eq!(first_crossing(&[]), None);
        // Only the first crossing matters; later re-entries are ignored.
        assert_eq!(first_crossing(&[0.5, -0.1, 0.2, -0.4]), Some(0));
    }

    #[test]
    fn visibility_labels_agreement_and_divergence() {
        // Both fields agree: everything labeled with 1 up to the crossing.
        let lab = visibility_labels(&[0.5, 0.2, -0.1, -0.3], &[0.4, 0.1, -0.2, -0.5]);
        assert_eq!(lab.labels, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(lab.labeled.iter().all(|&m| m));
        assert_eq!(lab.labeled_count(), 4);

        // Fields disagree about sample 1: it is excluded.
        let lab = visibility_labels(&[0.5, -0.1], &[0.5, 0.2]);
        assert_eq!(lab.labeled, vec![true, false]);
        assert_eq!(lab.labels[0], 1.0);
        assert!((lab.labeled_fraction() - 0.5).abs() < 1e-15);

        // No crossing anywhere: all visible.
        let lab = visibility_labels(&[0.5, 0.4, 0.1], &[0.9, 0.2, 0.3]);
        assert_eq!(lab.labels, vec![1.0, 1.0, 1.0]);
        assert!(lab.labeled.iter().all(|&m| m));
    }

    #[test]
    fn visibility_labels_are_monotone_on_random_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let srdf: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sdf: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lab = visibility_labels(&srdf, &sdf);
            let visible: Vec<f64> = lab
                .labels
                .iter()
                .zip(&lab.labeled)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            assert!(
                visible.windows(2).all(|w| w[0] >= w[1]),
                "labels must never turn back on along a ray: {visible:?}"
            );
        }
    }

    #[test]
    fn visibility_labels_match_the_scene_oracle() {
        let scene = Scene::ghost();
        let (origin, dir) = scene.probe_ray_normalized();
        let hit = scene.first_surface(origin, dir).expect("probe ray must hit");

        let n = 64;
        let (near, far) = (0.5, 7.5);
        let zs: Vec<f64> = (0..n)
            .map(|i| near + (far - near) * (i as f64 + 0.5) / n as f64)
            .collect();
        let srdf: Vec<f64> = zs
            .iter()
            .map(|&z| scene.srdf(origin + z * dir, dir))
            .collect();
        let sdf: Vec<f64> = zs.iter().map(|&z| scene.sdf(origin + z * dir)).collect();
        let lab = visibility_labels(&srdf, &sdf);

        // Exact oracles agree in sign everywhere, so every sample is labeled,
        // and away from the crossing interval the labels equal ground truth.
        assert_eq!(lab.labeled_count(), n);
        let step = (far - near) / n as f64;
        for (i, &z) in zs.iter().enumerate() {
            if (z - hit.t).abs() <= step {
                continue; // straddling samples depend on interval placement
            }
            let truth = if scene.visible(origin, dir, z) { 1.0 } else { 0.0 };
            assert_eq!(lab.labels[i], truth, "sample {i} at z {z}");
        }
    }

    #[test]
    fn visibility_loss_values() {
        let all = VisibilityLabels {
            labels: vec![1.0, 0.0],
            labeled: vec![true, true],
        };
        // Saturated correct logits: essentially zero loss.
        assert!(visibility_loss(&[30.0, -30.0], &all) < 1e-9);
        // Uninformative logits: ln 2 per sample.
        let ln2 = std::f64::consts::LN_2;
        assert!((visibility_loss(&[0.0, 0.0], &all) - ln2).abs() < 1e-15);
        // Nothing labeled: zero by definition.
        let none = VisibilityLabels {
            labels: vec![0.0, 0.0],
            labeled: vec![false, false],
        };
        assert_eq!(visibility_loss(&[5.0, -5.0], &none), 0.0);
        // Confidently wrong is expensive.
        assert!(visibility_loss(&[-10.0, 10.0], &all) > 9.0);
    }

    #[test]
    fn binary_cross_entropy_is_stable_at_extreme_logits() {
        assert!(binary_cross_entropy(800.0, 1.0).is_finite());
        assert!(binary_cross_entropy(-800.0, 0.0).is_finite());
        assert!(binary_cross_entropy(800.0, 1.0) < 1e-12);
        assert!((binary_cross_entropy(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossBreakdown::default(), &w).unwrap(), 0.0);

        let only_con = LossBreakdown {
            consistency: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(&only_con, &w).unwrap(), 1.0);

        let only_vis = LossBreakdown {
            visibility: 1.0,
            ..Default::default()
        };
        assert!((total_loss(&only_vis, &w).unwrap() - 0.001).abs() < 1e-18);

        // The color term is unweighted; depth picks up its multiplier.
        let mixed = LossBreakdown {
            rgb: 2.0,
            depth: 1.0,
            ..Default::default()
        };
        assert!((total_loss(&mixed, &w).unwrap() - 2.1).abs() < 1e-15);
    }

    #[test]
    fn total_loss_names_the_broken_component() {
        let w = LossWeights::default();
        let bad = LossBreakdown {
            smooth: f64::NAN,
            ..Default::default()
        };
        let err = total_loss(&bad, &w).unwrap_err();
        assert!(err.to_string().contains("smooth"), "{err}");

        let bad = LossBreakdown {
            eikonal: f64::INFINITY,
            ..Default::default()
        };
        let err = total_loss(&bad, &w).unwrap_err();
        assert!(err.to_string().contains("eikonal"), "{err}");
    }

    #[test]
    fn sharp_softplus_shift_trick_is_exact() {
        // The linear-field helper relies on softplus(100 x) / 100 being
        // exactly x for x >= 10 in f64; spot-check the identity.
        assert_eq!(sharp_softplus(10.0), 10.0);
        assert_eq!(sharp_softplus(9.5), 9.5);
    }
}
