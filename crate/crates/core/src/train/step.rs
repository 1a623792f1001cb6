//! One optimization step. Phase 1 runs without a tape: it draws the coarse
//! and importance depths (in ray order, so the rng stream is independent of
//! chunking), fixes the depth-alignment constants, the sign-disagreement
//! mask, and the visibility labels from detached predictions. Phase 2
//! re-evaluates the field on a recorded graph in ray chunks; every loss node
//! divides by the batch-wide normalizer, so the per-chunk scalars sum exactly
//! to the full-batch losses and the accumulated gradients match a single
//! unchunked pass up to float reassociation. One Adam update ends the step.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DensityMode, RayBatch, TrainConfig, TrainError, TrainState, VisibilitySource};
use crate::ad::{Graph, Tensor};
use crate::field::{
    color_forward, geometry_with_gradient, srdf_forward, FieldParams, FieldVars,
};
use crate::geom::Vec3;
use crate::loss::{
    consistency_loss_nodes, depth_align, depth_loss_nodes, eikonal_loss_nodes, normal_loss_nodes,
    rgb_loss_nodes, smooth_loss_nodes, total_loss, visibility_labels, visibility_loss_nodes,
    LossBreakdown, VisibilityLabels,
};
use crate::render::{
    density_from_sdf, density_from_srdf, density_nodes, importance_depths, merge_depths,
    quadrature, quadrature_nodes, render_depth, stratified_depths, weighted_rows_nodes,
    RaySamples,
};
use crate::scene::BACKGROUND_RGB;

/// Per-step scalars for the log. Losses are the unweighted component values;
/// `total` is the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub rgb: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub visibility: f64,
    pub total: f64,
    /// Samples where the two distance fields disagree in sign.
    pub disagreeing: usize,
    /// Fraction of ray samples that received a visibility label.
    pub labeled_fraction: f64,
    pub beta_sdf: f64,
    pub beta_srdf: f64,
    /// Depth alignment scale/shift fixed for this step.
    pub w: f64,
    pub q: f64,
}

impl StepStats {
    /// One log line. Floats print shortest-round-trip, so identical runs
    /// produce byte-identical logs.
    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.rgb,
            self.depth,
            self.normal,
            self.eikonal,
            self.smooth,
            self.consistency,
            self.visibility,
            self.total,
            self.disagreeing,
            self.labeled_fraction,
            self.beta_sdf,
            self.beta_srdf,
            self.w,
            self.q
        )
    }
}

fn vec3_rows(v: &[Vec3]) -> Tensor {
    Tensor::from_vec(v.len(), 3, v.iter().flat_map(|p| p.to_array()).collect())
        .expect("row layout")
}

fn rgb_rows(v: &[[f64; 3]]) -> Tensor {
    Tensor::from_vec(v.len(), 3, v.iter().flatten().copied().collect()).expect("row layout")
}

fn column(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.len(), 1, v.to_vec()).expect("column layout")
}

fn flag_column(v: &[bool]) -> Tensor {
    column(
        &v.iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>(),
    )
}

fn accumulate(slot: &mut Option<Tensor>, grad: &Tensor) {
    match slot {
        Some(acc) => {
            for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                *a += g;
            }
        }
        None => *slot = Some(grad.clone()),
    }
}

/// Write the offending batch next to the run artifacts so a blown-up step
/// can be replayed. Best effort: a failed write still aborts the step.
fn dump_batch(
    dir: Option<&Path>,
    step: u64,
    component: &str,
    value: f64,
    batch: &RayBatch,
) -> Option<PathBuf> {
    let dir = dir?;
    let path = dir.join(format!("nonfinite_step_{step:06}.json"));
    let as_arrays = |v: &[Vec3]| v.iter().map(|p| p.to_array()).collect::<Vec<_>>();
    let payload = serde_json::json!({
        "step": step,
        "component": component,
        "value": value.to_string(),
        "origins": as_arrays(&batch.origins),
        "dirs": as_arrays(&batch.dirs),
        "near": batch.near,
        "far": batch.far,
    });
    std::fs::write(&path, payload.to_string()).ok()?;
    Some(path)
}

/// One full optimization step over `batch`. On success the field, density
/// sharpness, Adam moments and step counter have advanced; a non-finite loss
/// aborts before any of them change.
pub fn train_step(
    state: &mut TrainState,
    batch: &RayBatch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    debug_dir: Option<&Path>,
) -> Result<StepStats, TrainError> {
    let rays = batch.len();
    if rays == 0 {
        return Err(TrainError::Config("empty ray batch".into()));
    }
    let n_coarse = cfg.coarse_samples;
    let n = n_coarse + cfg.fine_samples;
    let chunk = cfg.chunk_rays.max(1);
    let dual = cfg.density_mode == DensityMode::Srdf;
    let nonfinite = |component: &'static str, value: f64| TrainError::NonFinite {
        step: state.step,
        component,
        dump: dump_batch(debug_dir, state.step, component, value, batch),
    };

    // ---- Phase 1: depth samples. Coarse bins first for every ray, then the
    // rng-free proposal pass, then the importance draws, again per ray.
    let coarse_z: Vec<Vec<f64>> = (0..rays)
        .map(|r| stratified_depths(batch.near[r], batch.far[r], n_coarse, rng))
        .collect();

    // Proposal weights always come from the signed-distance branch so every
    // density mode integrates the same sample distribution.
    let mut coarse_w: Vec<Vec<f64>> = Vec::with_capacity(rays);
    for lo in (0..rays).step_by(chunk) {
        let hi = (lo + chunk).min(rays);
        let mut pts = Vec::with_capacity((hi - lo) * n_coarse);
        for r in lo..hi {
            pts.extend(coarse_z[r].iter().map(|&z| batch.origins[r] + z * batch.dirs[r]));
        }
        let d = state.field.eval_sdf(&pts);
        for (j, r) in (lo..hi).enumerate() {
            let proposal = RaySamples::from_depths(
                batch.origins[r],
                batch.dirs[r],
                coarse_z[r].clone(),
                batch.far[r],
            );
            let sigma: Vec<f64> = d[j * n_coarse..(j + 1) * n_coarse]
                .iter()
                .map(|&di| density_from_sdf(di, &state.density.sdf))
                .collect();
            coarse_w.push(quadrature(&sigma, &proposal.delta).weights);
        }
    }

    let samples: Vec<RaySamples> = (0..rays)
        .map(|r| {
            let z = if cfg.fine_samples > 0 {
                let fine = importance_depths(
                    &coarse_z[r],
                    batch.far[r],
                    &coarse_w[r],
                    cfg.fine_samples,
                    rng,
                );
                merge_depths(coarse_z[r].clone(), fine)
            } else {
                coarse_z[r].clone()
            };
            RaySamples::from_depths(batch.origins[r], batch.dirs[r], z, batch.far[r])
        })
        .collect();

    // ---- Phase 1.5: detached predictions fix the step's constants — the
    // (w, q) depth alignment, the sign-disagreement mask, and the labels.
    let total_pts = rays * n;
    let mut d_sdf = vec![0.0; total_pts];
    let mut d_srdf = vec![0.0; total_pts];
    for lo in (0..rays).step_by(chunk) {
        let hi = (lo + chunk).min(rays);
        let mut pts = Vec::with_capacity((hi - lo) * n);
        let mut dirs = Vec::with_capacity((hi - lo) * n);
        for r in lo..hi {
            pts.extend(samples[r].points());
            dirs.extend(std::iter::repeat(batch.dirs[r]).take(n));
        }
        let (d_g, feat) = state.field.eval_geometry(&pts);
        let (d_r, _logits) = state.field.eval_srdf(&pts, &dirs, &feat);
        d_sdf[lo * n..hi * n].copy_from_slice(&d_g);
        d_srdf[lo * n..hi * n].copy_from_slice(&d_r);
    }

    let primary_density = if dual {
        state.density.srdf_params()
    } else {
        &state.density.sdf
    };
    let rendered_depth: Vec<f64> = (0..rays)
        .map(|r| {
            let sigma: Vec<f64> = (0..n)
                .map(|i| {
                    if dual {
                        density_from_srdf(d_srdf[r * n + i], primary_density)
                    } else {
                        density_from_sdf(d_sdf[r * n + i], primary_density)
                    }
                })
                .collect();
            let quad = quadrature(&sigma, &samples[r].delta);
            render_depth(&quad.weights, &samples[r].z)
        })
        .collect();
    let fg: Vec<usize> = (0..rays).filter(|&r| batch.mask[r]).collect();
    let fg_rendered: Vec<f64> = fg.iter().map(|&r| rendered_depth[r]).collect();
    let fg_true: Vec<f64> = fg.iter().map(|&r| batch.depth[r]).collect();
    let (w_align, q_align) = depth_align(&fg_rendered, &fg_true);

    let con_mask: Vec<f64> = d_srdf
        .iter()
        .zip(&d_sdf)
        .map(|(&a, &b)| if a * b < 0.0 { 1.0 } else { 0.0 })
        .collect();
    let disagreeing = con_mask.iter().filter(|&&m| m == 1.0).count();

    let mut labels = VisibilityLabels {
        labels: Vec::with_capacity(total_pts),
        labeled: Vec::with_capacity(total_pts),
    };
    for r in 0..rays {
        let a = &d_srdf[r * n..(r + 1) * n];
        let b = &d_sdf[r * n..(r + 1) * n];
        let per_ray = match cfg.visibility {
            VisibilitySource::Off => VisibilityLabels {
                labels: vec![0.0; n],
                labeled: vec![false; n],
            },
            VisibilitySource::Sdf => visibility_labels(b, b),
            VisibilitySource::Srdf => visibility_labels(a, a),
            VisibilitySource::Both => visibility_labels(a, b),
        };
        labels.labels.extend(per_ray.labels);
        labels.labeled.extend(per_ray.labeled);
    }
    let labeled = labels.labeled_count();

    // Regularizer points. Drawn even when their weights are zero, so the rng
    // stream does not depend on the loss configuration.
    let bounds = state.field.bounds;
    let uniform_pt = |rng: &mut ChaCha8Rng| {
        Vec3::new(
            rng.gen_range(bounds.min.x..bounds.max.x),
            rng.gen_range(bounds.min.y..bounds.max.y),
            rng.gen_range(bounds.min.z..bounds.max.z),
        )
    };
    let n_uniform = cfg.eikonal_points / 2;
    let mut eik_pts = Vec::with_capacity(cfg.eikonal_points);
    for _ in 0..n_uniform {
        eik_pts.push(uniform_pt(rng));
    }
    for _ in n_uniform..cfg.eikonal_points {
        let r = rng.gen_range(0..rays);
        let i = rng.gen_range(0..n);
        eik_pts.push(samples[r].origin + samples[r].z[i] * samples[r].dir);
    }
    let mut smooth_at = Vec::with_capacity(cfg.smooth_points);
    let mut smooth_shifted = Vec::with_capacity(cfg.smooth_points);
    for _ in 0..cfg.smooth_points {
        let p = uniform_pt(rng);
        // Uniform in the perturbation ball: uniform cos-elevation direction,
        // cube-root radius.
        let z = rng.gen_range(-1.0..1.0f64);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let rad = cfg.weights.smooth_radius * rng.gen::<f64>().cbrt();
        let s = (1.0 - z * z).max(0.0).sqrt();
        smooth_at.push(p);
        smooth_shifted.push(p + rad * Vec3::new(s * phi.cos(), s * phi.sin(), z));
    }

    // ---- Phase 2: recorded chunks. Component values accumulate across
    // chunks; gradients accumulate per Adam slot in fixed chunk order.
    let n_field = state.field.tensors().len();
    let slot_beta_sdf = n_field;
    let slot_beta_srdf = n_field + 1;
    let mut acc: Vec<Option<Tensor>> = vec![None; n_field + 2];
    let mut parts = LossBreakdown::default();
    let k = cfg.weights.sign_slope;

    for lo in (0..rays).step_by(chunk) {
        let hi = (lo + chunk).min(rays);
        let c_rays = hi - lo;
        let mut pts = Vec::with_capacity(c_rays * n);
        let mut dirs_flat = Vec::with_capacity(c_rays * n);
        let mut z_data = Vec::with_capacity(c_rays * n);
        let mut delta_data = Vec::with_capacity(c_rays * n);
        for r in lo..hi {
            pts.extend(samples[r].points());
            dirs_flat.extend(std::iter::repeat(batch.dirs[r]).take(n));
            z_data.extend_from_slice(&samples[r].z);
            delta_data.extend_from_slice(&samples[r].delta);
        }

        let mut g = Graph::new();
        let vars = FieldVars::insert(&state.field, &mut g);
        let b_sdf = g.param(state.density.sdf.beta_raw.clone());
        let dn_sdf = density_nodes(&mut g, b_sdf);
        let (b_srdf, dn_srdf) = if state.density.tied {
            (None, dn_sdf)
        } else {
            let b = g.param(state.density.srdf.beta_raw.clone());
            (Some(b), density_nodes(&mut g, b))
        };

        let ge = geometry_with_gradient(&mut g, &vars, &state.field, &pts, cfg.grad_step)?;
        let enc = g.leaf(state.field.encode(&pts));
        let dirs_node = g.leaf(vec3_rows(&dirs_flat));
        let (d_srdf_node, vis_node) = srdf_forward(&mut g, &vars, enc, dirs_node, ge.feat)?;
        let normals_unit = g.unit_rows(ge.grad)?;
        let colors = color_forward(&mut g, &vars, enc, dirs_node, normals_unit, ge.feat)?;

        let z_leaf = g.leaf(Tensor::from_vec(c_rays, n, z_data)?);
        let delta_leaf = g.leaf(Tensor::from_vec(c_rays, n, delta_data)?);
        let d_sdf_mat = g.reshape(ge.d, c_rays, n)?;
        let s_sdf = dn_sdf.sigma(&mut g, d_sdf_mat)?;
        let q_sdf = quadrature_nodes(&mut g, s_sdf, delta_leaf)?;
        let d_srdf_mat = g.reshape(d_srdf_node, c_rays, n)?;
        let s_srdf = dn_srdf.sigma(&mut g, d_srdf_mat)?;
        let q_srdf = quadrature_nodes(&mut g, s_srdf, delta_leaf)?;
        let q_primary = if dual { &q_srdf } else { &q_sdf };

        let rgb_true = g.leaf(rgb_rows(&batch.rgb[lo..hi]));
        let c_sdf = crate::render::composite_rgb_nodes(&mut g, &q_sdf, colors, n, BACKGROUND_RGB)?;
        let rgb_node = if dual {
            let c_srdf =
                crate::render::composite_rgb_nodes(&mut g, &q_srdf, colors, n, BACKGROUND_RGB)?;
            rgb_loss_nodes(&mut g, c_srdf, c_sdf, rgb_true, rays)?
        } else {
            let diff = g.sub(c_sdf, rgb_true)?;
            let diff = g.abs(diff);
            let sum = g.sum(diff);
            g.scale(sum, 1.0 / rays as f64)
        };

        let mut checks: Vec<(&'static str, f64)> = Vec::with_capacity(5);
        let mut total = rgb_node;
        let rgb_val = g.value(rgb_node).scalar_value();
        checks.push(("rgb", rgb_val));
        parts.rgb += rgb_val;

        let mask_leaf = g.leaf(flag_column(&batch.mask[lo..hi]));
        if cfg.weights.depth > 0.0 {
            let wz = g.mul(q_primary.weights, z_leaf)?;
            let depth_node = g.row_sum(wz);
            let depth_true = g.leaf(column(&batch.depth[lo..hi]));
            let node = depth_loss_nodes(
                &mut g, depth_node, depth_true, w_align, q_align, mask_leaf, rays,
            )?;
            let v = g.value(node).scalar_value();
            checks.push(("depth", v));
            parts.depth += v;
            let scaled = g.scale(node, cfg.weights.depth);
            total = g.add(total, scaled)?;
        }
        if cfg.weights.normal > 0.0 {
            let normal_node = weighted_rows_nodes(&mut g, q_primary.weights, normals_unit, n)?;
            let normal_true = g.leaf(vec3_rows(&batch.normal[lo..hi]));
            let node = normal_loss_nodes(&mut g, normal_node, normal_true, mask_leaf, rays)?;
            let v = g.value(node).scalar_value();
            checks.push(("normal", v));
            parts.normal += v;
            let scaled = g.scale(node, cfg.weights.normal);
            total = g.add(total, scaled)?;
        }
        if cfg.weights.consistency > 0.0 && disagreeing > 0 {
            let mask = g.leaf(column(&con_mask[lo * n..hi * n]));
            let node =
                consistency_loss_nodes(&mut g, d_srdf_node, ge.d, mask, k, disagreeing)?;
            let v = g.value(node).scalar_value();
            checks.push(("consistency", v));
            parts.consistency += v;
            let scaled = g.scale(node, cfg.weights.consistency);
            total = g.add(total, scaled)?;
        }
        if cfg.weights.visibility > 0.0 && labeled > 0 {
            let label_leaf = g.leaf(column(&labels.labels[lo * n..hi * n]));
            let labeled_leaf = g.leaf(flag_column(&labels.labeled[lo * n..hi * n]));
            let node =
                visibility_loss_nodes(&mut g, vis_node, label_leaf, labeled_leaf, labeled)?;
            let v = g.value(node).scalar_value();
            checks.push(("visibility", v));
            parts.visibility += v;
            let scaled = g.scale(node, cfg.weights.visibility);
            total = g.add(total, scaled)?;
        }

        if let Some(&(component, value)) = checks.iter().find(|(_, v)| !v.is_finite()) {
            return Err(nonfinite(component, value));
        }

        let grads = g.backward(total)?;
        for (slot, node) in vars.nodes.iter().enumerate() {
            if let Some(gt) = grads.get(*node) {
                accumulate(&mut acc[slot], gt);
            }
        }
        if let Some(gt) = grads.get(b_sdf) {
            accumulate(&mut acc[slot_beta_sdf], gt);
        }
        if let Some(b) = b_srdf {
            if let Some(gt) = grads.get(b) {
                accumulate(&mut acc[slot_beta_srdf], gt);
            }
        }
    }

    // Regularizers on their own graphs, weighted at the root so their
    // gradients land pre-scaled like the chunk terms.
    if cfg.weights.eikonal > 0.0 && !eik_pts.is_empty() {
        let mut g = Graph::new();
        let vars = FieldVars::insert(&state.field, &mut g);
        let ge = geometry_with_gradient(&mut g, &vars, &state.field, &eik_pts, cfg.grad_step)?;
        let node = eikonal_loss_nodes(&mut g, ge.grad);
        let v = g.value(node).scalar_value();
        if !v.is_finite() {
            return Err(nonfinite("eikonal", v));
        }
        parts.eikonal = v;
        let root = g.scale(node, cfg.weights.eikonal);
        let grads = g.backward(root)?;
        for (slot, node) in vars.nodes.iter().enumerate() {
            if let Some(gt) = grads.get(*node) {
                accumulate(&mut acc[slot], gt);
            }
        }
    }
    if cfg.weights.smooth > 0.0 && !smooth_at.is_empty() {
        let mut g = Graph::new();
        let vars = FieldVars::insert(&state.field, &mut g);
        let all: Vec<Vec3> = smooth_at.iter().chain(&smooth_shifted).copied().collect();
        let ge = geometry_with_gradient(&mut g, &vars, &state.field, &all, cfg.grad_step)?;
        let at = g.slice_rows(ge.grad, 0, smooth_at.len())?;
        let shifted = g.slice_rows(ge.grad, smooth_at.len(), smooth_shifted.len())?;
        let node = smooth_loss_nodes(&mut g, at, shifted)?;
        let v = g.value(node).scalar_value();
        if !v.is_finite() {
            return Err(nonfinite("smooth", v));
        }
        parts.smooth = v;
        let root = g.scale(node, cfg.weights.smooth);
        let grads = g.backward(root)?;
        for (slot, node) in vars.nodes.iter().enumerate() {
            if let Some(gt) = grads.get(*node) {
                accumulate(&mut acc[slot], gt);
            }
        }
    }

    let total = total_loss(&parts, &cfg.weights)?;

    // ---- Adam over every group: field tensors, then the two sharpness
    // scalars. SRDF-branch tensors use their own (much smaller) rate.
    let lrs: Vec<f64> = state
        .field
        .tensor_names()
        .iter()
        .map(|name| {
            if FieldParams::is_srdf_tensor(name) {
                cfg.lr_srdf
            } else {
                cfg.lr_field
            }
        })
        .chain([cfg.lr_density, cfg.lr_density])
        .collect();
    let grad_refs: Vec<Option<&Tensor>> = acc.iter().map(|o| o.as_ref()).collect();
    let mut params: Vec<&mut Tensor> = state.field.tensors_mut();
    params.push(&mut state.density.sdf.beta_raw);
    params.push(&mut state.density.srdf.beta_raw);
    state.adam.step(&mut params, &grad_refs, &lrs);

    state.step += 1;
    Ok(StepStats {
        rgb: parts.rgb,
        depth: parts.depth,
        normal: parts.normal,
        eikonal: parts.eikonal,
        smooth: parts.smooth,
        consistency: parts.consistency,
        visibility: parts.visibility,
        total,
        disagreeing,
        labeled_fraction: labeled as f64 / total_pts as f64,
        beta_sdf: state.density.sdf.beta(),
        beta_srdf: state.density.srdf_params().beta(),
        w: w_align,
        q: q_align,
    })
}
