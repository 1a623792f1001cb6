//! Recorded-graph versions of the objectives. Every builder reduces to a
//! 1x1 scalar node whose value matches the plain function on the same data,
//! and whose backward pass supplies the training gradients. Masks, labels,
//! alignment coefficients and normalizers are plain values computed ahead of
//! the recording: they are constants of the graph by construction.
//!
//! Normalizers are passed explicitly (batch ray count, disagreeing-pair
//! count, labeled-sample count) so a chunked batch can sum per-chunk scalars
//! and land exactly on the full-batch loss.

use super::LossWeights;
use crate::ad::{AdError, Graph, NodeId};

/// Dual color term: sum of elementwise l1 distances of both branches to the
/// reference, divided by the minibatch ray count.
pub fn rgb_loss_nodes(
    g: &mut Graph,
    c_srdf: NodeId,
    c_sdf: NodeId,
    c_true: NodeId,
    batch_rays: usize,
) -> Result<NodeId, AdError> {
    let da = g.sub(c_srdf, c_true)?;
    let da = g.abs(da);
    let db = g.sub(c_sdf, c_true)?;
    let db = g.abs(db);
    let sa = g.sum(da);
    let sb = g.sum(db);
    let total = g.add(sa, sb)?;
    Ok(g.scale(total, 1.0 / batch_rays.max(1) as f64))
}

/// Depth term |w D + q - D_ref| with a 0/1 foreground mask; (w, q) come from
/// the no-grad alignment pass and enter as plain coefficients.
pub fn depth_loss_nodes(
    g: &mut Graph,
    depth: NodeId,
    depth_true: NodeId,
    w: f64,
    q: f64,
    mask: NodeId,
    batch_rays: usize,
) -> Result<NodeId, AdError> {
    let scaled = g.scale(depth, w);
    let aligned = g.add_const(scaled, q);
    let resid = g.sub(aligned, depth_true)?;
    let resid = g.abs(resid);
    let masked = g.mul(resid, mask)?;
    let sum = g.sum(masked);
    Ok(g.scale(sum, 1.0 / batch_rays.max(1) as f64))
}

/// Normal term: per-ray l1 distance plus |1 - N . N_ref|, masked to
/// foreground rays. `normal` holds raw rendered normal sums (R x 3),
/// `normal_true` unit references.
pub fn normal_loss_nodes(
    g: &mut Graph,
    normal: NodeId,
    normal_true: NodeId,
    mask: NodeId,
    batch_rays: usize,
) -> Result<NodeId, AdError> {
    let diff = g.sub(normal, normal_true)?;
    let diff = g.abs(diff);
    let l1 = g.row_sum(diff);
    let dot = g.row_dot(normal, normal_true)?;
    let neg = g.neg(dot);
    let one_minus = g.add_const(neg, 1.0);
    let angular = g.abs(one_minus);
    let per_ray = g.add(l1, angular)?;
    let masked = g.mul(per_ray, mask)?;
    let sum = g.sum(masked);
    Ok(g.scale(sum, 1.0 / batch_rays.max(1) as f64))
}

/// Eikonal term from a (P x 3) node of spatial gradients: mean (|g| - 1)^2.
pub fn eikonal_loss_nodes(g: &mut Graph, gradients: NodeId) -> NodeId {
    let norms = g.row_l2norm(gradients);
    let centered = g.add_const(norms, -1.0);
    let sq = g.square(centered);
    g.mean(sq)
}

/// Smoothness term from paired (P x 3) gradient nodes: mean row-l2 of the
/// difference.
pub fn smooth_loss_nodes(
    g: &mut Graph,
    grads_at: NodeId,
    grads_shifted: NodeId,
) -> Result<NodeId, AdError> {
    let diff = g.sub(grads_at, grads_shifted)?;
    let norms = g.row_l2norm(diff);
    Ok(g.mean(norms))
}

/// Sign-consistency term: masked squared difference of soft signs, divided
/// by the batch-wide disagreeing-pair count (frozen during the pass).
pub fn consistency_loss_nodes(
    g: &mut Graph,
    srdf: NodeId,
    sdf: NodeId,
    mask: NodeId,
    k: f64,
    disagreeing: usize,
) -> Result<NodeId, AdError> {
    let sa = g.scale(srdf, k);
    let sa = g.sigmoid(sa);
    let sb = g.scale(sdf, k);
    let sb = g.sigmoid(sb);
    let diff = g.sub(sa, sb)?;
    let sq = g.square(diff);
    let masked = g.mul(sq, mask)?;
    let sum = g.sum(masked);
    Ok(g.scale(sum, 1.0 / disagreeing.max(1) as f64))
}

/// Visibility term: masked stable binary cross-entropy softplus(l) - y l,
/// divided by the batch-wide labeled-sample count.
pub fn visibility_loss_nodes(
    g: &mut Graph,
    logits: NodeId,
    labels: NodeId,
    mask: NodeId,
    labeled: usize,
) -> Result<NodeId, AdError> {
    let sp = g.softplus(logits);
    let yl = g.mul(labels, logits)?;
    let bce = g.sub(sp, yl)?;
    let masked = g.mul(bce, mask)?;
    let sum = g.sum(masked);
    Ok(g.scale(sum, 1.0 / labeled.max(1) as f64))
}

/// Scalar nodes of the seven components, ready for weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub rgb: NodeId,
    pub depth: NodeId,
    pub normal: NodeId,
    pub eikonal: NodeId,
    pub smooth: NodeId,
    pub consistency: NodeId,
    pub visibility: NodeId,
}

/// Weighted sum matching `total_loss`: color unweighted, the rest scaled by
/// their multipliers.
pub fn total_loss_nodes(
    g: &mut Graph,
    parts: &LossNodes,
    weights: &LossWeights,
) -> Result<NodeId, AdError> {
    let terms = [
        (parts.depth, weights.depth),
        (parts.normal, weights.normal),
        (parts.eikonal, weights.eikonal),
        (parts.smooth, weights.smooth),
        (parts.consistency, weights.consistency),
        (parts.visibility, weights.visibility),
    ];
    let mut acc = parts.rgb;
    for (node, lambda) in terms {
        let scaled = g.scale(node, lambda);
        acc = g.add(acc, scaled)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::ad::Tensor;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat3(v: &[[f64; 3]]) -> Tensor {
        Tensor::from_vec(v.len(), 3, v.iter().flatten().copied().collect()).unwrap()
    }

    fn vec3s(v: &[Vec3]) -> Tensor {
        Tensor::from_vec(v.len(), 3, v.iter().flat_map(|p| p.to_array()).collect()).unwrap()
    }

    fn column(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    /// Central-difference check of d(root)/d(param) for every coordinate.
    fn grad_check(
        build: impl Fn(&mut Graph, Tensor) -> (NodeId, NodeId),
        at: &Tensor,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let (root, param) = build(&mut g, at.clone());
        let grads = g.backward(root).unwrap();
        let analytic = grads.get(param).expect("param must receive a gradient");

        let h = 1e-6;
        for i in 0..at.len() {
            let eval = |v: f64| {
                let mut t = at.clone();
                t.data_mut()[i] = v;
                let mut g = Graph::new();
                let (root, _) = build(&mut g, t);
                g.value(root).scalar_value()
            };
            let fd = (eval(at.data()[i] + h) - eval(at.data()[i] - h)) / (2.0 * h);
            let got = analytic.data()[i];
            assert!(
                (got - fd).abs() <= tol * (1.0 + fd.abs()),
                "coordinate {i}: analytic {got} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn rgb_loss_graph_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect()
        };
        let (a, b, t) = (draw(5), draw(5), draw(5));
        let plain = rgb_loss(&a, &b, &t, 8);

        let mut g = Graph::new();
        let na = g.param(flat3(&a));
        let nb = g.param(flat3(&b));
        let nt = g.leaf(flat3(&t));
        let root = rgb_loss_nodes(&mut g, na, nb, nt, 8).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-12);
    }

    #[test]
    fn rgb_loss_gradients_check_out() {
        let truth = flat3(&[[0.2, 0.4, 0.9], [0.7, 0.1, 0.3]]);
        let start = flat3(&[[0.31, 0.52, 0.14], [0.66, 0.98, 0.05]]);
        grad_check(
            |g, t| {
                let p = g.param(t);
                let other = g.leaf(flat3(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]));
                let truth = g.leaf(truth.clone());
                let root = rgb_loss_nodes(g, p, other, truth, 2).unwrap();
                (root, p)
            },
            &start,
            1e-7,
        );
    }

    #[test]
    fn depth_loss_graph_matches_plain_with_mask() {
        // Rays 0 and 2 are foreground; ray 1 is background and masked out.
        let depth = [1.4, 9.9, 2.2];
        let truth = [1.5, 0.0, 2.0];
        let mask = [1.0, 0.0, 1.0];
        let (w, q) = (1.1, -0.05);
        let plain = depth_loss(&[1.4, 2.2], &[1.5, 2.0], w, q, 3);

        let mut g = Graph::new();
        let nd = g.param(column(&depth));
        let nt = g.leaf(column(&truth));
        let nm = g.leaf(column(&mask));
        let root = depth_loss_nodes(&mut g, nd, nt, w, q, nm, 3).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-12);

        // Masked rays contribute no gradient.
        let grads = g.backward(root).unwrap();
        let gd = grads.get(nd).unwrap();
        assert_eq!(gd.get(1, 0), 0.0);
        assert!(gd.get(0, 0) != 0.0 && gd.get(2, 0) != 0.0);
    }

    #[test]
    fn depth_loss_gradients_check_out() {
        let truth = column(&[1.5, 2.0, 0.7]);
        let mask = column(&[1.0, 1.0, 1.0]);
        grad_check(
            |g, t| {
                let p = g.param(t);
                let truth = g.leaf(truth.clone());
                let mask = g.leaf(mask.clone());
                let root = depth_loss_nodes(g, p, truth, 1.3, 0.2, mask, 3).unwrap();
                (root, p)
            },
            &column(&[1.1, 2.4, 0.3]),
            1e-6,
        );
    }

    #[test]
    fn normal_loss_graph_matches_plain() {
        let n = [Vec3::new(0.3, -0.8, 0.5), Vec3::new(-0.1, 0.9, 0.2)];
        let t = [
            Vec3::new(0.6, 0.0, 0.8),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let plain = normal_loss(&n, &t, 4);

        let mut g = Graph::new();
        let nn = g.param(vec3s(&n));
        let nt = g.leaf(vec3s(&t));
        let ones = g.leaf(Tensor::filled(2, 1, 1.0));
        let root = normal_loss_nodes(&mut g, nn, nt, ones, 4).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-12);
    }

    #[test]
    fn normal_loss_gradients_check_out() {
        let truth = vec3s(&[Vec3::new(0.6, 0.0, 0.8), Vec3::new(0.0, 1.0, 0.0)]);
        grad_check(
            |g, t| {
                let p = g.param(t);
                let truth = g.leaf(truth.clone());
                let mask = g.leaf(Tensor::filled(2, 1, 1.0));
                let root = normal_loss_nodes(g, p, truth, mask, 2).unwrap();
                (root, p)
            },
            // Away from the l1 kinks and the |1 - dot| kink.
            &vec3s(&[Vec3::new(0.3, -0.7, 0.45), Vec3::new(-0.2, 0.85, 0.3)]),
            1e-6,
        );
    }

    #[test]
    fn eikonal_and_smooth_graphs_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let ga: Vec<Vec3> = (0..12)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                )
            })
            .collect();
        let gb: Vec<Vec3> = ga.iter().map(|&v| v + Vec3::splat(0.01)).collect();

        let mut g = Graph::new();
        let na = g.param(vec3s(&ga));
        let nb = g.leaf(vec3s(&gb));
        let eik = eikonal_loss_nodes(&mut g, na);
        let smo = smooth_loss_nodes(&mut g, na, nb).unwrap();
        assert!((g.value(eik).scalar_value() - eikonal_from_gradients(&ga)).abs() < 1e-12);
        assert!(
            (g.value(smo).scalar_value() - smooth_loss_from_gradients(&ga, &gb)).abs() < 1e-12
        );
    }

    #[test]
    fn eikonal_gradients_check_out() {
        grad_check(
            |g, t| {
                let p = g.param(t);
                (eikonal_loss_nodes(g, p), p)
            },
            &vec3s(&[Vec3::new(0.8, -0.4, 0.3), Vec3::new(-1.2, 0.5, 0.9)]),
            1e-6,
        );
    }

    #[test]
    fn smooth_gradients_check_out() {
        let shifted = vec3s(&[Vec3::new(0.7, -0.2, 0.4), Vec3::new(0.1, 0.8, -0.5)]);
        grad_check(
            |g, t| {
                let p = g.param(t);
                let q = g.leaf(shifted.clone());
                (smooth_loss_nodes(g, p, q).unwrap(), p)
            },
            &vec3s(&[Vec3::new(0.75, -0.15, 0.48), Vec3::new(0.2, 0.7, -0.45)]),
            1e-6,
        );
    }

    #[test]
    fn consistency_graph_matches_plain() {
        let srdf = [0.5, 0.3, -0.5, 0.02];
        let sdf = [-0.5, 0.2, 0.5, -0.01];
        let k = 12.0;
        let plain = consistency_loss(&srdf, &sdf, k);
        let mask: Vec<f64> = consistency_mask(&srdf, &sdf)
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        let disagreeing = mask.iter().filter(|&&m| m == 1.0).count();

        let mut g = Graph::new();
        let na = g.param(column(&srdf));
        let nb = g.param(column(&sdf));
        let nm = g.leaf(column(&mask));
        let root = consistency_loss_nodes(&mut g, na, nb, nm, k, disagreeing).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-12);
    }

    #[test]
    fn consistency_autodiff_equals_the_analytic_derivative() {
        // 1000 disagreeing pairs in both orientations; the recorded graph's
        // gradient with the mask frozen must reproduce the closed form.
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let k = 12.0;
        let n = 1000usize;
        let mut srdf = Vec::with_capacity(n);
        let mut sdf = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.gen_range(0.005..1.5);
            let b = -rng.gen_range(0.005..1.5);
            if i % 2 == 0 {
                srdf.push(a);
                sdf.push(b);
            } else {
                srdf.push(b);
                sdf.push(a);
            }
        }

        let mut g = Graph::new();
        let na = g.leaf(column(&srdf));
        let nb = g.param(column(&sdf));
        let nm = g.leaf(Tensor::filled(n, 1, 1.0));
        let root = consistency_loss_nodes(&mut g, na, nb, nm, k, n).unwrap();
        let grads = g.backward(root).unwrap();
        let gb = grads.get(nb).unwrap();

        for i in 0..n {
            // The batch divides by N_r; the single-pair oracle does not.
            let got = gb.get(i, 0) * n as f64;
            let want = consistency_grad_oracle(srdf[i], sdf[i], k);
            assert!(
                (got - want).abs() <= 1e-10 * (1.0 + want.abs()),
                "pair {i} ({}, {}): autodiff {got} vs oracle {want}",
                srdf[i],
                sdf[i]
            );
        }
    }

    #[test]
    fn visibility_graph_matches_plain_and_gradients_check_out() {
        let logits = [2.0, -1.0, 0.3, 4.0];
        let labels = VisibilityLabels {
            labels: vec![1.0, 0.0, 1.0, 0.0],
            labeled: vec![true, true, false, true],
        };
        let plain = visibility_loss(&logits, &labels);
        let mask: Vec<f64> = labels
            .labeled
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();

        let mut g = Graph::new();
        let nl = g.param(column(&logits));
        let ny = g.leaf(column(&labels.labels));
        let nm = g.leaf(column(&mask));
        let root =
            visibility_loss_nodes(&mut g, nl, ny, nm, labels.labeled_count()).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-12);

        let y = column(&labels.labels);
        let m = column(&mask);
        grad_check(
            |g, t| {
                let p = g.param(t);
                let y = g.leaf(y.clone());
                let m = g.leaf(m.clone());
                (visibility_loss_nodes(g, p, y, m, 3).unwrap(), p)
            },
            &column(&logits),
            1e-6,
        );
    }

    #[test]
    fn total_loss_graph_matches_plain() {
        let weights = LossWeights::default();
        let parts = LossBreakdown {
            rgb: 0.8,
            depth: 0.3,
            normal: 0.6,
            eikonal: 0.05,
            smooth: 0.02,
            consistency: 0.4,
            visibility: 0.7,
        };
        let plain = total_loss(&parts, &weights).unwrap();

        let mut g = Graph::new();
        let node = |g: &mut Graph, v: f64| g.param(Tensor::scalar(v));
        let nodes = LossNodes {
            rgb: node(&mut g, parts.rgb),
            depth: node(&mut g, parts.depth),
            normal: node(&mut g, parts.normal),
            eikonal: node(&mut g, parts.eikonal),
            smooth: node(&mut g, parts.smooth),
            consistency: node(&mut g, parts.consistency),
            visibility: node(&mut g, parts.visibility),
        };
        let root = total_loss_nodes(&mut g, &nodes, &weights).unwrap();
        assert!((g.value(root).scalar_value() - plain).abs() < 1e-15);

        // Each component's gradient is its weight (color is unweighted).
        let grads = g.backward(root).unwrap();
        let get = |n: NodeId| grads.get(n).unwrap().scalar_value();
        assert_eq!(get(nodes.rgb), 1.0);
        assert_eq!(get(nodes.depth), weights.depth);
        assert_eq!(get(nodes.visibility), weights.visibility);
    }
}
