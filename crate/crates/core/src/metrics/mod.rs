//! Reconstruction quality measures over point clouds sampled from meshes:
//! the L1 chamfer family (accuracy, completeness, precision/recall/F-score
//! at a distance threshold), orientation-blind normal agreement, image PSNR,
//! and the JSON / plain-text report they roll up into.

mod kdtree;

pub use kdtree::KdTree;

use crate::geom::Vec3;
use crate::mesh::TriMesh;
use rand::Rng;

/// Distance threshold (in scene units) for precision/recall/F-score.
pub const DEFAULT_TAU: f64 = 0.05;

/// Point count used when sampling meshes for reported metrics.
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("point cloud `{0}` is empty")]
    EmptyCloud(&'static str),
    #[error("mesh has no surface to sample")]
    EmptyMesh,
    #[error("point cloud `{0}` carries no normals")]
    MissingNormals(&'static str),
    #[error("normal {index} has length {len}, expected unit within 1e-6")]
    BadNormal { index: usize, len: f64 },
    #[error("{0}")]
    BadInput(String),
}

/// Points with optional per-point unit normals, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> PointCloud {
        PointCloud { points, normals: None }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<PointCloud, MetricsError> {
        let cloud = PointCloud { points, normals: Some(normals) };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(MetricsError::BadInput(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            for (index, n) in normals.iter().enumerate() {
                let len = n.norm();
                if (len - 1.0).abs() > 1e-6 {
                    return Err(MetricsError::BadNormal { index, len });
                }
            }
        }
        Ok(())
    }
}

/// Area-weighted uniform surface sampling. Each draw picks a face through
/// the cumulative-area table, then a point inside it through the square-root
/// warp (uniform over the triangle, not clustered at a corner). Normals come
/// from barycentric interpolation of vertex normals when the mesh has them,
/// otherwise from the face winding; either way the output is unit length.
pub fn sample_mesh(
    mesh: &TriMesh,
    n: usize,
    rng: &mut impl Rng,
) -> Result<PointCloud, MetricsError> {
    if n == 0 {
        return Err(MetricsError::BadInput("sample count must be at least 1".into()));
    }
    if mesh.faces.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MetricsError::EmptyMesh);
    }

    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        // `partition_point` skips zero-area faces (their cumulative entry
        // equals the previous one); the clamp covers u rounding up to total.
        let f = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[f];
        let (pa, pb, pc) = (
            mesh.vertices[ia as usize],
            mesh.vertices[ib as usize],
            mesh.vertices[ic as usize],
        );
        let s = rng.gen::<f64>().sqrt();
        let t = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - t), s * t);
        points.push(pa * wa + pb * wb + pc * wc);

        let face_n = (pb - pa).cross(pc - pa);
        let raw = match &mesh.normals {
            Some(vn) => {
                vn[ia as usize] * wa + vn[ib as usize] * wb + vn[ic as usize] * wc
            }
            None => face_n,
        };
        // Interpolation can cancel on opposing vertex normals; fall back to
        // the face plane rather than emit a non-unit normal.
        let unit = if raw.norm() > 1e-12 {
            raw.normalized()
        } else if face_n.norm() > 1e-12 {
            face_n.normalized()
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        normals.push(unit);
    }
    Ok(PointCloud { points, normals: Some(normals) })
}

/// The chamfer family over two clouds. All distances are L1 (coordinate-wise
/// absolute sum); precision and recall count strictly-below-threshold hits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionMetrics {
    /// Mean L1 distance, predicted point to nearest ground-truth point.
    pub acc: f64,
    /// Mean L1 distance, ground-truth point to nearest predicted point.
    pub comp: f64,
    /// (acc + comp) / 2.
    pub chamfer_l1: f64,
    /// Fraction of predicted points within tau of the ground truth.
    pub prec: f64,
    /// Fraction of ground-truth points within tau of the prediction.
    pub recall: f64,
    /// Harmonic mean of prec and recall; 0 when both are 0.
    pub fscore: f64,
}

pub fn reconstruction_metrics(
    pred: &PointCloud,
    gt: &PointCloud,
    tau: f64,
) -> Result<ReconstructionMetrics, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyCloud("pred"));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyCloud("gt"));
    }
    let (acc, prec) = directed(&pred.points, &gt.points, tau);
    let (comp, recall) = directed(&gt.points, &pred.points, tau);
    let chamfer_l1 = 0.5 * (acc + comp);
    let fscore = if prec + recall > 0.0 {
        2.0 * prec * recall / (prec + recall)
    } else {
        0.0
    };
    Ok(ReconstructionMetrics { acc, comp, chamfer_l1, prec, recall, fscore })
}

/// Mean L1 nearest-neighbour distance from `from` into `to`, and the
/// fraction of those distances strictly below `tau`.
fn directed(from: &[Vec3], to: &[Vec3], tau: f64) -> (f64, f64) {
    let tree = KdTree::build(to);
    let hits = tree.nearest_many(from);
    let mut sum = 0.0;
    let mut below = 0usize;
    for &(_, d) in &hits {
        sum += d;
        if d < tau {
            below += 1;
        }
    }
    (sum / from.len() as f64, below as f64 / from.len() as f64)
}

/// Mean |n · n̄| over L1 nearest-neighbour pairings, run in both directions
/// and averaged. The absolute value makes the score blind to winding, which
/// extracted meshes do not pin down.
pub fn normal_consistency(pred: &PointCloud, gt: &PointCloud) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyCloud("pred"));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyCloud("gt"));
    }
    pred.validate()?;
    gt.validate()?;
    let pn = pred.normals.as_deref().ok_or(MetricsError::MissingNormals("pred"))?;
    let gn = gt.normals.as_deref().ok_or(MetricsError::MissingNormals("gt"))?;
    let forward = directed_normal(&pred.points, pn, &gt.points, gn);
    let backward = directed_normal(&gt.points, gn, &pred.points, pn);
    Ok(0.5 * (forward + backward))
}

fn directed_normal(from: &[Vec3], from_n: &[Vec3], to: &[Vec3], to_n: &[Vec3]) -> f64 {
    let tree = KdTree::build(to);
    let hits = tree.nearest_many(from);
    let mut sum = 0.0;
    for (i, &(j, _)) in hits.iter().enumerate() {
        sum += from_n[i].dot(to_n[j]).abs();
    }
    sum / from.len() as f64
}

/// 20·log10(1/√MSE) over flattened linear [0,1] channel values, computed
/// before any quantization. Identical inputs give +∞.
pub fn psnr(img_a: &[f64], img_b: &[f64]) -> Result<f64, MetricsError> {
    if img_a.len() != img_b.len() {
        return Err(MetricsError::BadInput(format!(
            "image sizes differ: {} vs {} values",
            img_a.len(),
            img_b.len()
        )));
    }
    if img_a.is_empty() {
        return Err(MetricsError::BadInput("images are empty".into()));
    }
    let sum: f64 = img_a.iter().zip(img_b).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(psnr_from_mse(sum / img_a.len() as f64))
}

/// `psnr` for rgb pixel slices as the renderer produces them.
pub fn psnr_rgb(img_a: &[[f64; 3]], img_b: &[[f64; 3]]) -> Result<f64, MetricsError> {
    if img_a.len() != img_b.len() {
        return Err(MetricsError::BadInput(format!(
            "image sizes differ: {} vs {} pixels",
            img_a.len(),
            img_b.len()
        )));
    }
    if img_a.is_empty() {
        return Err(MetricsError::BadInput("images are empty".into()));
    }
    let mut sum = 0.0;
    for (a, b) in img_a.iter().zip(img_b) {
        for c in 0..3 {
            sum += (a[c] - b[c]) * (a[c] - b[c]);
        }
    }
    Ok(psnr_from_mse(sum / (3 * img_a.len()) as f64))
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse > 0.0 {
        -10.0 * mse.log10()
    } else {
        f64::INFINITY
    }
}

/// Everything the evaluator reports for one reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct MetricsReport {
    pub recon: ReconstructionMetrics,
    pub normal_consistency: f64,
    pub psnr_srdf: f64,
    pub psnr_sdf: f64,
}

impl MetricsReport {
    pub fn rows(&self) -> [(&'static str, f64); 9] {
        [
            ("acc", self.recon.acc),
            ("comp", self.recon.comp),
            ("chamfer_l1", self.recon.chamfer_l1),
            ("prec", self.recon.prec),
            ("recall", self.recon.recall),
            ("fscore", self.recon.fscore),
            ("normal_consistency", self.normal_consistency),
            ("psnr_srdf", self.psnr_srdf),
            ("psnr_sdf", self.psnr_sdf),
        ]
    }

    /// JSON object with one key per metric. Infinite PSNR serializes as the
    /// string "inf" because JSON has no number for it.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (name, value) in self.rows() {
            let v = if value.is_finite() {
                serde_json::json!(value)
            } else {
                serde_json::Value::from("inf")
            };
            obj.insert(name.to_string(), v);
        }
        serde_json::Value::Object(obj)
    }

    /// Aligned name/value lines for standard output.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for (name, value) in self.rows() {
            let shown = if value.is_finite() {
                format!("{value:.6}")
            } else {
                "inf".to_string()
            };
            out.push_str(&format!("{name:<20} {shown}\n"));
        }
        out
    }
}
