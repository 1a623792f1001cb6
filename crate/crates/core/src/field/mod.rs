//! The three-head neural field: a geometry MLP producing signed distance and
//! a feature vector, an SRDF MLP producing signed ray distance and a
//! visibility logit, and a color MLP. Positions enter through a Fourier
//! encoding; spatial gradients of the geometry head are taken with central
//! differences so the whole pipeline stays first-order.

mod checkpoint;
mod init;

pub use checkpoint::{
    load_tensors, save_tensors, sidecar_path, ArchMeta, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use init::NormalSampler;

use crate::ad::{gemm, AdError, GemmKind, Graph, NodeId, Tensor};
use crate::geom::{Aabb, Vec3};
use serde::{Deserialize, Serialize};

/// Hidden width of every MLP.
pub const HIDDEN: usize = 256;
/// Fourier frequency count for positions.
pub const FOURIER_LEVELS: usize = 6;
/// Sharpness of the geometry/SRDF activation: softplus(beta*x)/beta. Large
/// beta keeps the activation close to relu, which the sphere-like geometric
/// initialization scheme assumes, while staying smooth for gradient checks.
pub const SOFTPLUS_SHARPNESS: f64 = 100.0;
/// Default central-difference step for spatial gradients.
pub const GRAD_STEP: f64 = 1e-3;

/// Sinusoidal position features: [p, sin(2^0 pi p_hat), cos(2^0 pi p_hat),
/// ..., sin(2^{L-1} pi p_hat), cos(2^{L-1} pi p_hat)] where p_hat is p
/// normalized to [-1, 1]^3 by the scene bounds and p is passed through raw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierEncoding {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl FourierEncoding {
    pub fn new(num_frequencies: usize) -> FourierEncoding {
        FourierEncoding {
            num_frequencies,
            include_input: true,
        }
    }

    pub fn output_dim(&self) -> usize {
        let base = if self.include_input { 3 } else { 0 };
        base + 3 * 2 * self.num_frequencies
    }

    /// Encode a batch of points as a (P, output_dim) tensor.
    pub fn encode(&self, points: &[Vec3], bounds: &Aabb) -> Tensor {
        let dim = self.output_dim();
        let center = bounds.center();
        let half = bounds.half_extents();
        let mut data = Vec::with_capacity(points.len() * dim);
        for &p in points {
            if self.include_input {
                data.extend_from_slice(&[p.x, p.y, p.z]);
            }
            let hat = [
                (p.x - center.x) / half.x,
                (p.y - center.y) / half.y,
                (p.z - center.z) / half.z,
            ];
            for level in 0..self.num_frequencies {
                let f = std::f64::consts::PI * (1u64 << level) as f64;
                for h in hat {
                    data.push((f * h).sin());
                }
                for h in hat {
                    data.push((f * h).cos());
                }
            }
        }
        Tensor::from_vec(points.len(), dim, data).expect("encode layout")
    }
}

/// One dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor, // (in, out)
    pub b: Tensor, // (1, out)
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Linear {
        Linear {
            w: Tensor::zeros(input, output),
            b: Tensor::zeros(1, output),
        }
    }

    /// Plain (untaped) forward.
    fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = gemm(GemmKind::Plain, x, &self.w).expect("linear shapes");
        for r in 0..out.rows() {
            let bias = self.b.row(0);
            for (v, bv) in out.row_mut(r).iter_mut().zip(bias) {
                *v += bv;
            }
        }
        out
    }
}

/// All parameters of the field. The geometry trunk is 8 weight layers deep
/// counting its two output heads (distance + feature) as the final layer;
/// the SRDF and color MLPs are 2 layers each.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub encoding: FourierEncoding,
    pub bounds: Aabb,
    /// 39 -> 256 followed by six 256 -> 256 layers, sharp-softplus activated.
    pub geo_layers: Vec<Linear>,
    pub geo_sdf: Linear,  // 256 -> 1
    pub geo_feat: Linear, // 256 -> 256
    /// concat(encode(p), r, F_g): 298 -> 256, sharp-softplus.
    pub srdf_hidden: Linear,
    pub srdf_out: Linear, // 256 -> 1 (signed ray distance)
    pub srdf_vis: Linear, // 256 -> 1 (visibility logit)
    /// concat(encode(p), r, n, F_g): 301 -> 256, relu.
    pub color_hidden: Linear,
    pub color_out: Linear, // 256 -> 3, sigmoid
}

/// Geometry-head outputs for a batch of points (graph version).
pub struct GeometryEval {
    /// (P, 1) signed distance.
    pub d: NodeId,
    /// (P, 256) feature vector.
    pub feat: NodeId,
    /// (P, 3) central-difference spatial gradient of d (not normalized).
    pub grad: NodeId,
}

impl FieldParams {
    /// Zero-valued parameters with the right shapes (callers initialize).
    pub fn empty(bounds: Aabb) -> FieldParams {
        let encoding = FourierEncoding::new(FOURIER_LEVELS);
        let enc_dim = encoding.output_dim();
        let mut geo_layers = vec![Linear::zeros(enc_dim, HIDDEN)];
        for _ in 0..6 {
            geo_layers.push(Linear::zeros(HIDDEN, HIDDEN));
        }
        FieldParams {
            encoding,
            bounds,
            geo_layers,
            geo_sdf: Linear::zeros(HIDDEN, 1),
            geo_feat: Linear::zeros(HIDDEN, HIDDEN),
            srdf_hidden: Linear::zeros(enc_dim + 3 + HIDDEN, HIDDEN),
            srdf_out: Linear::zeros(HIDDEN, 1),
            srdf_vis: Linear::zeros(HIDDEN, 1),
            color_hidden: Linear::zeros(enc_dim + 3 + 3 + HIDDEN, HIDDEN),
            color_out: Linear::zeros(HIDDEN, 3),
        }
    }

    /// Fixed flattening order shared by checkpoints, optimizer state and
    /// gradient plumbing: [w, b] per layer, geometry trunk first.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.geo_layers.len() {
            names.push(format!("geo.{i}.w"));
            names.push(format!("geo.{i}.b"));
        }
        for head in ["geo_sdf", "geo_feat", "srdf_hidden", "srdf_out", "srdf_vis", "color_hidden", "color_out"] {
            names.push(format!("{head}.w"));
            names.push(format!("{head}.b"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.geo_layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        for l in [
            &self.geo_sdf,
            &self.geo_feat,
            &self.srdf_hidden,
            &self.srdf_out,
            &self.srdf_vis,
            &self.color_hidden,
            &self.color_out,
        ] {
            out.push(&l.w);
            out.push(&l.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.geo_layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for l in [
            &mut self.geo_sdf,
            &mut self.geo_feat,
            &mut self.srdf_hidden,
            &mut self.srdf_out,
            &mut self.srdf_vis,
            &mut self.color_hidden,
            &mut self.color_out,
        ] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    /// True for tensors belonging to the SRDF branch (trained at its own,
    /// much smaller learning rate).
    pub fn is_srdf_tensor(name: &str) -> bool {
        name.starts_with("srdf_")
    }

    pub fn encode(&self, points: &[Vec3]) -> Tensor {
        self.encoding.encode(points, &self.bounds)
    }

    // ---- plain (untaped) evaluation ----

    /// Geometry head without a tape: returns per-point signed distance and
    /// the (P, 256) feature tensor.
    pub fn eval_geometry(&self, points: &[Vec3]) -> (Vec<f64>, Tensor) {
        let mut h = self.encode(points);
        for layer in &self.geo_layers {
            h = layer.apply(&h);
            h = h.map(sharp_softplus);
        }
        let d = self.geo_sdf.apply(&h);
        let feat = self.geo_feat.apply(&h);
        (d.data().to_vec(), feat)
    }

    /// Signed distance only (meshing hot path).
    pub fn eval_sdf(&self, points: &[Vec3]) -> Vec<f64> {
        let mut h = self.encode(points);
        for layer in &self.geo_layers {
            h = layer.apply(&h);
            h = h.map(sharp_softplus);
        }
        self.geo_sdf.apply(&h).data().to_vec()
    }

    /// SRDF head without a tape. `dirs` must be unit vectors, one per point.
    pub fn eval_srdf(&self, points: &[Vec3], dirs: &[Vec3], feat: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let input = concat_tensors(&[&self.encode(points), &dirs_tensor(dirs), feat]);
        let h = self.srdf_hidden.apply(&input).map(sharp_softplus);
        let d = self.srdf_out.apply(&h);
        let v = self.srdf_vis.apply(&h);
        (d.data().to_vec(), v.data().to_vec())
    }

    /// Color head without a tape; `normals` should be unit-length.
    pub fn eval_color(
        &self,
        points: &[Vec3],
        dirs: &[Vec3],
        normals: &[Vec3],
        feat: &Tensor,
    ) -> Vec<[f64; 3]> {
        let input = concat_tensors(&[
            &self.encode(points),
            &dirs_tensor(dirs),
            &dirs_tensor(normals),
            feat,
        ]);
        let h = self.color_hidden.apply(&input).map(|x| x.max(0.0));
        let out = self.color_out.apply(&h).map(crate::ad::sigmoid);
        (0..out.rows())
            .map(|r| [out.get(r, 0), out.get(r, 1), out.get(r, 2)])
            .collect()
    }

    /// Central-difference spatial gradient of the geometry distance, one
    /// vector per point (untaped).
    pub fn spatial_gradient(&self, points: &[Vec3], h: f64) -> Vec<Vec3> {
        let stacked = stack_stencil(points, h);
        let d = self.eval_sdf(&stacked);
        let n = points.len();
        (0..n)
            .map(|i| {
                Vec3::new(
                    (d[n + i] - d[2 * n + i]) / (2.0 * h),
                    (d[3 * n + i] - d[4 * n + i]) / (2.0 * h),
                    (d[5 * n + i] - d[6 * n + i]) / (2.0 * h),
                )
            })
            .collect()
    }

    /// Distance, features, and spatial gradient in one stacked trunk pass
    /// (untaped); the feature head runs on the center rows only.
    pub fn eval_geometry_with_gradient(
        &self,
        points: &[Vec3],
        h: f64,
    ) -> (Vec<f64>, Tensor, Vec<Vec3>) {
        let n = points.len();
        let stacked = stack_stencil(points, h);
        let mut hid = self.encode(&stacked);
        for layer in &self.geo_layers {
            hid = layer.apply(&hid);
            hid = hid.map(sharp_softplus);
        }
        let d_all = self.geo_sdf.apply(&hid);
        let d = d_all.data();
        let center =
            Tensor::from_vec(n, hid.cols(), hid.data()[..n * hid.cols()].to_vec()).expect("slice");
        let feat = self.geo_feat.apply(&center);
        let grad = (0..n)
            .map(|i| {
                Vec3::new(
                    (d[n + i] - d[2 * n + i]) / (2.0 * h),
                    (d[3 * n + i] - d[4 * n + i]) / (2.0 * h),
                    (d[5 * n + i] - d[6 * n + i]) / (2.0 * h),
                )
            })
            .collect();
        (d[..n].to_vec(), feat, grad)
    }
}

/// Graph-side handles for every parameter tensor, in `tensor_names` order.
pub struct FieldVars {
    pub nodes: Vec<NodeId>,
}

impl FieldVars {
    /// Insert every parameter as a trainable graph input.
    pub fn insert(params: &FieldParams, g: &mut Graph) -> FieldVars {
        let nodes = params.tensors().iter().map(|t| g.param((*t).clone())).collect();
        FieldVars { nodes }
    }

    /// Insert every parameter as a constant (forward-only graphs).
    pub fn insert_frozen(params: &FieldParams, g: &mut Graph) -> FieldVars {
        let nodes = params.tensors().iter().map(|t| g.leaf((*t).clone())).collect();
        FieldVars { nodes }
    }

    fn layer(&self, idx: usize) -> (NodeId, NodeId) {
        (self.nodes[2 * idx], self.nodes[2 * idx + 1])
    }

    // Indices follow tensor_names(): 7 trunk layers then the 7 heads.
    fn geo_layer(&self, i: usize) -> (NodeId, NodeId) {
        self.layer(i)
    }
    fn geo_sdf(&self) -> (NodeId, NodeId) {
        self.layer(7)
    }
    fn geo_feat(&self) -> (NodeId, NodeId) {
        self.layer(8)
    }
    fn srdf_hidden(&self) -> (NodeId, NodeId) {
        self.layer(9)
    }
    fn srdf_out(&self) -> (NodeId, NodeId) {
        self.layer(10)
    }
    fn srdf_vis(&self) -> (NodeId, NodeId) {
        self.layer(11)
    }
    fn color_hidden(&self) -> (NodeId, NodeId) {
        self.layer(12)
    }
    fn color_out(&self) -> (NodeId, NodeId) {
        self.layer(13)
    }
}

fn sharp_softplus_node(g: &mut Graph, x: NodeId) -> NodeId {
    let scaled = g.scale(x, SOFTPLUS_SHARPNESS);
    let sp = g.softplus(scaled);
    g.scale(sp, 1.0 / SOFTPLUS_SHARPNESS)
}

/// Geometry trunk on an already-encoded input node: returns the last hidden
/// activation (P, 256).
fn geometry_trunk(g: &mut Graph, vars: &FieldVars, enc: NodeId) -> Result<NodeId, AdError> {
    let mut h = enc;
    for i in 0..7 {
        let (w, b) = vars.geo_layer(i);
        h = g.affine(h, w, b)?;
        h = sharp_softplus_node(g, h);
    }
    Ok(h)
}

/// Geometry head (graph version) on pre-encoded points.
pub fn geometry_forward(
    g: &mut Graph,
    vars: &FieldVars,
    enc: NodeId,
) -> Result<(NodeId, NodeId), AdError> {
    let h = geometry_trunk(g, vars, enc)?;
    let (wd, bd) = vars.geo_sdf();
    let d = g.affine(h, wd, bd)?;
    let (wf, bf) = vars.geo_feat();
    let feat = g.affine(h, wf, bf)?;
    Ok((d, feat))
}

/// Geometry head plus central-difference spatial gradient in one stacked
/// pass: the trunk runs on 7P rows (the stencil), the distance head on all
/// of them, the feature head only on the P center rows.
pub fn geometry_with_gradient(
    g: &mut Graph,
    vars: &FieldVars,
    params: &FieldParams,
    points: &[Vec3],
    h_step: f64,
) -> Result<GeometryEval, AdError> {
    let n = points.len();
    let stacked = stack_stencil(points, h_step);
    let enc = g.leaf(params.encode(&stacked));
    let hidden = geometry_trunk(g, vars, enc)?;
    let (wd, bd) = vars.geo_sdf();
    let d_all = g.affine(hidden, wd, bd)?;
    let d = g.slice_rows(d_all, 0, n)?;
    let h_center = g.slice_rows(hidden, 0, n)?;
    let (wf, bf) = vars.geo_feat();
    let feat = g.affine(h_center, wf, bf)?;

    let mut cols = Vec::with_capacity(3);
    for axis in 0..3 {
        let plus = g.slice_rows(d_all, (1 + 2 * axis) * n, n)?;
        let minus = g.slice_rows(d_all, (2 + 2 * axis) * n, n)?;
        let diff = g.sub(plus, minus)?;
        cols.push(g.scale(diff, 1.0 / (2.0 * h_step)));
    }
    let xy = g.concat_cols(cols[0], cols[1])?;
    let grad = g.concat_cols(xy, cols[2])?;
    Ok(GeometryEval { d, feat, grad })
}

/// SRDF head (graph version). `enc` and `dirs` are usually constants; `feat`
/// comes from the geometry head.
pub fn srdf_forward(
    g: &mut Graph,
    vars: &FieldVars,
    enc: NodeId,
    dirs: NodeId,
    feat: NodeId,
) -> Result<(NodeId, NodeId), AdError> {
    let pd = g.concat_cols(enc, dirs)?;
    let input = g.concat_cols(pd, feat)?;
    let (wh, bh) = vars.srdf_hidden();
    let h = g.affine(input, wh, bh)?;
    let h = sharp_softplus_node(g, h);
    let (wo, bo) = vars.srdf_out();
    let d = g.affine(h, wo, bo)?;
    let (wv, bv) = vars.srdf_vis();
    let v = g.affine(h, wv, bv)?;
    Ok((d, v))
}

/// Color head (graph version); `normals` must already be unit rows.
pub fn color_forward(
    g: &mut Graph,
    vars: &FieldVars,
    enc: NodeId,
    dirs: NodeId,
    normals: NodeId,
    feat: NodeId,
) -> Result<NodeId, AdError> {
    let a = g.concat_cols(enc, dirs)?;
    let b = g.concat_cols(a, normals)?;
    let input = g.concat_cols(b, feat)?;
    let (wh, bh) = vars.color_hidden();
    let h = g.affine(input, wh, bh)?;
    let h = g.relu(h);
    let (wo, bo) = vars.color_out();
    let out = g.affine(h, wo, bo)?;
    Ok(g.sigmoid(out))
}

/// softplus(beta x)/beta: numerically the same piecewise form used by the
/// graph op composition.
pub fn sharp_softplus(x: f64) -> f64 {
    crate::ad::softplus(SOFTPLUS_SHARPNESS * x) / SOFTPLUS_SHARPNESS
}

/// Stencil layout: [center, +x, -x, +y, -y, +z, -z], each block P long.
pub fn stack_stencil(points: &[Vec3], h: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(points.len() * 7);
    out.extend_from_slice(points);
    for axis in 0..3 {
        let e = Vec3::ZERO.with_component(axis, h);
        out.extend(points.iter().map(|&p| p + e));
        out.extend(points.iter().map(|&p| p - e));
    }
    out
}

fn dirs_tensor(dirs: &[Vec3]) -> Tensor {
    let mut data = Vec::with_capacity(dirs.len() * 3);
    for d in dirs {
        data.extend_from_slice(&[d.x, d.y, d.z]);
    }
    Tensor::from_vec(dirs.len(), 3, data).expect("dirs layout")
}

fn concat_tensors(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|t| t.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for t in parts {
            debug_assert_eq!(t.rows(), rows);
            data.extend_from_slice(t.row(r));
        }
    }
    Tensor::from_vec(rows, cols, data).expect("concat layout")
}
