//! Recorded-graph versions of the density transform and the quadrature,
//! used by the training step. Values agree with the plain functions in the
//! parent module to rounding; gradients flow into distances, colors, and
//! the raw sharpness parameter.

use super::BETA_MIN;
use crate::ad::{AdError, Graph, NodeId, Tensor};

/// Graph handles for one density branch.
#[derive(Debug, Clone, Copy)]
pub struct DensityNodes {
    pub beta_raw: NodeId,
    pub beta: NodeId,
    pub alpha: NodeId,
}

/// Build beta = softplus(beta_raw) + BETA_MIN and alpha = 1/beta on the
/// graph. `beta_raw` is inserted by the caller (param for training, leaf
/// for frozen evaluation).
pub fn density_nodes(g: &mut Graph, beta_raw: NodeId) -> DensityNodes {
    let sp = g.softplus(beta_raw);
    let beta = g.add_const(sp, BETA_MIN);
    let alpha = g.recip(beta);
    DensityNodes {
        beta_raw,
        beta,
        alpha,
    }
}

impl DensityNodes {
    /// sigma = alpha * Psi_beta(-d), written branch-free so one expression
    /// covers both signs: Psi(-d) = m + (0.5 - m) * exp(-|d| / beta) with
    /// m = [d < 0] taken from the forward value (detached). The derivative
    /// at exactly d = 0 is the abs subgradient (0) instead of the true
    /// -alpha/(2 beta); the event has measure zero and gradient checks
    /// steer clear of it.
    pub fn sigma(&self, g: &mut Graph, d: NodeId) -> Result<NodeId, AdError> {
        let (rows, cols) = g.shape(d);
        let mut mask = Tensor::zeros(rows, cols);
        let mut coef = Tensor::zeros(rows, cols);
        for (slot, v) in mask
            .data_mut()
            .iter_mut()
            .zip(g.value(d).data())
        {
            *slot = if *v < 0.0 { 1.0 } else { 0.0 };
        }
        for (slot, m) in coef.data_mut().iter_mut().zip(mask.data()) {
            *slot = 0.5 - m;
        }
        let abs_d = g.abs(d);
        let neg_abs = g.neg(abs_d);
        let exponent = g.mul_scalar(neg_abs, self.alpha)?;
        let decay = g.exp(exponent);
        let m_leaf = g.leaf(mask);
        let c_leaf = g.leaf(coef);
        let tail = g.mul(c_leaf, decay)?;
        let psi = g.add(m_leaf, tail)?;
        g.mul_scalar(psi, self.alpha)
    }
}

/// Graph handles for the per-ray compositing scaffolding; rays are rows,
/// samples are columns.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureNodes {
    pub alphas: NodeId,
    pub transmittances: NodeId,
    pub weights: NodeId,
    /// (R, 1) accumulated opacity per ray.
    pub opacity: NodeId,
}

/// sigma and delta are (R, N); T via exp of the exclusive running sum.
pub fn quadrature_nodes(
    g: &mut Graph,
    sigma: NodeId,
    delta: NodeId,
) -> Result<QuadratureNodes, AdError> {
    let sd = g.mul(sigma, delta)?;
    let acc = g.cumsum_exclusive_row(sd);
    let neg_acc = g.neg(acc);
    let transmittances = g.exp(neg_acc);
    let neg_sd = g.neg(sd);
    let decay = g.exp(neg_sd);
    let (rows, cols) = g.shape(sigma);
    let ones = g.constant(rows, cols, 1.0);
    let alphas = g.sub(ones, decay)?;
    let weights = g.mul(transmittances, alphas)?;
    let opacity = g.row_sum(weights);
    Ok(QuadratureNodes {
        alphas,
        transmittances,
        weights,
        opacity,
    })
}

/// Weighted per-ray sum of per-sample row vectors: weights (R, N) against
/// values (R*N, C) -> (R, C).
pub fn weighted_rows_nodes(
    g: &mut Graph,
    weights: NodeId,
    values: NodeId,
    samples_per_ray: usize,
) -> Result<NodeId, AdError> {
    let (rays, n) = g.shape(weights);
    debug_assert_eq!(n, samples_per_ray);
    let flat = g.reshape(weights, rays * n, 1)?;
    let tinted = g.mul_col_broadcast(values, flat)?;
    g.group_row_sum(tinted, samples_per_ray)
}

/// Per-ray color with background compositing: C + (1 - opacity) * bg.
pub fn composite_rgb_nodes(
    g: &mut Graph,
    quad: &QuadratureNodes,
    colors: NodeId,
    samples_per_ray: usize,
    background: [f64; 3],
) -> Result<NodeId, AdError> {
    let fg = weighted_rows_nodes(g, quad.weights, colors, samples_per_ray)?;
    let (rays, _) = g.shape(quad.opacity);
    let ones = g.constant(rays, 1, 1.0);
    let rest = g.sub(ones, quad.opacity)?;
    let mut bg_rows = Tensor::zeros(rays, 3);
    for r in 0..rays {
        bg_rows.row_mut(r).copy_from_slice(&background);
    }
    let bg_leaf = g.leaf(bg_rows);
    let bg_term = g.mul_col_broadcast(bg_leaf, rest)?;
    g.add(fg, bg_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{grad_check, Graph};
    use crate::render::{
        composite_over_background, density_from_sdf, quadrature, render_color, DensityParams,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_density_matches_plain() {
        let params = DensityParams::new(0.27);
        let ds: Vec<f64> = vec![-2.0, -0.4, -1e-9, 0.0, 1e-9, 0.3, 5.0];
        let mut g = Graph::new();
        let raw = g.leaf(params.beta_raw.clone());
        let nodes = density_nodes(&mut g, raw);
        let d_leaf = g.leaf(Tensor::from_vec(1, ds.len(), ds.clone()).unwrap());
        let sigma = nodes.sigma(&mut g, d_leaf).unwrap();
        for (i, &d) in ds.iter().enumerate() {
            let plain = density_from_sdf(d, &params);
            let graph = g.value(sigma).get(0, i);
            assert!(
                (plain - graph).abs() <= 1e-15 * plain.max(1.0),
                "d = {d}: plain {plain}, graph {graph}"
            );
        }
    }

    #[test]
    fn graph_quadrature_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rays, n) = (3, 17);
        let sigma: Vec<f64> = (0..rays * n).map(|_| rng.gen_range(0.0..8.0)).collect();
        let delta: Vec<f64> = (0..rays * n).map(|_| rng.gen_range(0.01..0.4)).collect();
        let mut g = Graph::new();
        let s = g.leaf(Tensor::from_vec(rays, n, sigma.clone()).unwrap());
        let d = g.leaf(Tensor::from_vec(rays, n, delta.clone()).unwrap());
        let quad = quadrature_nodes(&mut g, s, d).unwrap();
        for r in 0..rays {
            let plain = quadrature(
                &sigma[r * n..(r + 1) * n],
                &delta[r * n..(r + 1) * n],
            );
            for i in 0..n {
                assert!((g.value(quad.weights).get(r, i) - plain.weights[i]).abs() < 1e-14);
                assert!(
                    (g.value(quad.transmittances).get(r, i) - plain.transmittances[i]).abs()
                        < 1e-14
                );
            }
            assert!((g.value(quad.opacity).get(r, 0) - plain.opacity).abs() < 1e-14);
        }
    }

    #[test]
    fn graph_composite_matches_plain() {
        let bg = [0.08, 0.08, 0.10];
        let sigma = vec![0.4, 2.0, 0.1, 1.3];
        let delta = vec![0.3, 0.2, 0.25, 0.5];
        let colors = [[0.9, 0.1, 0.2], [0.2, 0.7, 0.4], [0.5, 0.5, 0.0], [0.1, 0.2, 0.9]];
        let plain_q = quadrature(&sigma, &delta);
        let plain_rgb = composite_over_background(
            render_color(&plain_q.weights, &colors),
            plain_q.opacity,
            bg,
        );

        let mut g = Graph::new();
        let s = g.leaf(Tensor::from_vec(1, 4, sigma).unwrap());
        let d = g.leaf(Tensor::from_vec(1, 4, delta).unwrap());
        let quad = quadrature_nodes(&mut g, s, d).unwrap();
        let c = g.leaf(Tensor::from_vec(4, 3, colors.concat()).unwrap());
        let rgb = composite_rgb_nodes(&mut g, &quad, c, 4, bg).unwrap();
        for k in 0..3 {
            assert!((g.value(rgb).get(0, k) - plain_rgb[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn full_pipeline_gradients_check_out() {
        // Distances (away from the |d| kink at zero) -> density ->
        // quadrature -> composite -> mean, checked against central
        // differences; then the same for beta_raw.
        let params = DensityParams::new(0.3);
        let raw0 = params.beta_raw.clone();
        let n = 6;
        let d0 = Tensor::from_vec(1, n, vec![-1.2, -0.5, -0.1, 0.2, 0.8, 2.0]).unwrap();
        let delta = Tensor::filled(1, n, 0.35);
        let colors = Tensor::from_vec(
            n,
            3,
            (0..n * 3).map(|i| 0.1 + 0.8 * (i as f64 / (n * 3) as f64)).collect(),
        )
        .unwrap();
        let bg = [0.08, 0.08, 0.10];

        let raw_for_d = raw0.clone();
        let (delta2, colors2) = (delta.clone(), colors.clone());
        let err_d = grad_check(
            &|g: &mut Graph, d: crate::ad::NodeId| {
                let raw = g.leaf(raw_for_d.clone());
                let nodes = density_nodes(g, raw);
                let sigma = nodes.sigma(g, d)?;
                let dl = g.leaf(delta2.clone());
                let quad = quadrature_nodes(g, sigma, dl)?;
                let c = g.leaf(colors2.clone());
                let rgb = composite_rgb_nodes(g, &quad, c, n, bg)?;
                Ok(g.mean(rgb))
            },
            &d0,
            1e-6,
        )
        .unwrap();
        assert!(err_d < 1e-7, "distance gradient rel err {err_d:.2e}");

        let d_fixed = d0.clone();
        let err_b = grad_check(
            &|g: &mut Graph, raw: crate::ad::NodeId| {
                let nodes = density_nodes(g, raw);
                let d = g.leaf(d_fixed.clone());
                let sigma = nodes.sigma(g, d)?;
                let dl = g.leaf(delta.clone());
                let quad = quadrature_nodes(g, sigma, dl)?;
                let c = g.leaf(colors.clone());
                let rgb = composite_rgb_nodes(g, &quad, c, n, bg)?;
                Ok(g.mean(rgb))
            },
            &raw0,
            1e-6,
        )
        .unwrap();
        assert!(err_b < 1e-7, "beta_raw gradient rel err {err_b:.2e}");
    }
}
