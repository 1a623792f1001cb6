//! Dense SDF grids and isosurface extraction: batched grid sampling over
//! z-slabs, marching cubes with a sign-consistent case table, triangle-mesh
//! bookkeeping (manifold and residual checks), and ASCII OBJ round-tripping.

mod cubes;
mod obj;

pub use cubes::marching_cubes;
pub use obj::{load_obj, save_obj};

use crate::geom::{Aabb, Vec3};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

/// Hard cap on sample counts so a typo cannot ask for terabytes.
pub const MAX_GRID_SAMPLES: usize = 512 * 512 * 512;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("grid contains NaN values")]
    NanInGrid,
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("OBJ parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Corner-sampled scalar field on a regular grid. Values are stored with x
/// varying fastest and z slowest, so one z-slab is one contiguous run of
/// nx * ny values. Spacing is per axis: the grid covers a box exactly, so
/// non-cubic bounds give non-cubic cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(
        origin: Vec3,
        spacing: Vec3,
        resolution: (usize, usize, usize),
    ) -> Result<ScalarGrid, MeshError> {
        let (nx, ny, nz) = resolution;
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(MeshError::Grid(format!(
                "resolution {nx}x{ny}x{nz} needs at least 2 samples per axis"
            )));
        }
        if nx.saturating_mul(ny).saturating_mul(nz) > MAX_GRID_SAMPLES {
            return Err(MeshError::Grid(format!(
                "resolution {nx}x{ny}x{nz} exceeds the {MAX_GRID_SAMPLES}-sample cap"
            )));
        }
        if !(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0) {
            return Err(MeshError::Grid(format!("spacing {spacing:?} must be positive")));
        }
        Ok(ScalarGrid {
            origin,
            spacing,
            nx,
            ny,
            nz,
            values: vec![0.0; nx * ny * nz],
        })
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    /// World position of a corner sample.
    #[inline]
    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                ix as f64 * self.spacing.x,
                iy as f64 * self.spacing.y,
                iz as f64 * self.spacing.z,
            )
    }

    /// Largest cell edge: the resolution scale for residual bounds.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.x.max(self.spacing.y).max(self.spacing.z)
    }

    /// Raw dump for debugging: little-endian f64 values next to a JSON
    /// sidecar describing origin, spacing and resolution.
    pub fn save_raw(&self, path: &Path) -> Result<(), MeshError> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out)?;
        let meta = serde_json::json!({
            "origin": self.origin.to_array(),
            "spacing": self.spacing.to_array(),
            "resolution": [self.nx, self.ny, self.nz],
        });
        let sidecar = path.with_extension("json");
        let mut f = std::fs::File::create(sidecar)?;
        writeln!(f, "{}", serde_json::to_string_pretty(&meta).expect("grid meta is plain data"))?;
        Ok(())
    }
}

/// Sample a batched scalar field at every grid corner covering `bounds` with
/// the given per-axis sample counts. The evaluator receives whole z-slabs at
/// once, so matrix-backed fields amortize their cost; slabs run in parallel
/// and land in disjoint output ranges, keeping the result deterministic.
pub fn sample_grid(
    eval: impl Fn(&[Vec3]) -> Vec<f64> + Sync,
    bounds: &Aabb,
    resolution: (usize, usize, usize),
) -> Result<ScalarGrid, MeshError> {
    let extent = bounds.max - bounds.min;
    let (nx, ny, nz) = resolution;
    let spacing = Vec3::new(
        extent.x / (nx as f64 - 1.0).max(1.0),
        extent.y / (ny as f64 - 1.0).max(1.0),
        extent.z / (nz as f64 - 1.0).max(1.0),
    );
    let mut grid = ScalarGrid::new(bounds.min, spacing, resolution)?;
    let (origin, slab) = (grid.origin, nx * ny);
    grid.values
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(iz, out)| {
            let z = origin.z + iz as f64 * spacing.z;
            let points: Vec<Vec3> = (0..slab)
                .map(|i| {
                    let (ix, iy) = (i % nx, i / nx);
                    Vec3::new(
                        origin.x + ix as f64 * spacing.x,
                        origin.y + iy as f64 * spacing.y,
                        z,
                    )
                })
                .collect();
            let vals = eval(&points);
            assert_eq!(vals.len(), slab, "evaluator must return one value per point");
            out.copy_from_slice(&vals);
        });
    Ok(grid)
}

/// Indexed triangle mesh. Faces are index triples wound so the right-hand
/// normal points toward positive field values (outward for an SDF).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Structural invariants: indices in range, no degenerate faces, and a
    /// normal per vertex when normals are present.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len() as u32;
        for (i, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&v| v >= n) {
                return Err(MeshError::Invalid(format!(
                    "face {i} references vertex out of range (have {n})"
                )));
            }
            if self.face_area(i) <= 1e-12 {
                return Err(MeshError::Invalid(format!("face {i} is degenerate")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.vertices.len() {
                return Err(MeshError::Invalid(format!(
                    "{} normals for {} vertices",
                    normals.len(),
                    self.vertices.len()
                )));
            }
        }
        if !self.vertices.iter().all(|v| v.is_finite()) {
            return Err(MeshError::Invalid("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Map from undirected edge to the number of faces using it.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Closed 2-manifold test: every edge shared by exactly two faces.
    /// Isosurfaces clipped by the grid boundary fail this (their rim edges
    /// have a single face), which is expected.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_face_counts().values().all(|&c| c == 2)
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_face_counts().values().filter(|&&c| c != 2).count()
    }

    /// Area-weighted vertex normals from face windings, unit length where a
    /// vertex has any area, zero otherwise.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vec3::splat(0.0); self.vertices.len()];
        for face in &self.faces {
            let [a, b, c] = *face;
            let (pa, pb, pc) = (
                self.vertices[a as usize],
                self.vertices[b as usize],
                self.vertices[c as usize],
            );
            // Cross product length is twice the area: weighting is built in.
            let n = (pb - pa).cross(pc - pa);
            acc[a as usize] += n;
            acc[b as usize] += n;
            acc[c as usize] += n;
        }
        self.normals = Some(
            acc.into_iter()
                .map(|n| if n.norm() > 1e-12 { n.normalized() } else { n })
                .collect(),
        );
    }

    /// Largest |field(v)| over all vertices, for convergence checks against
    /// an oracle field.
    pub fn max_residual(&self, field: impl Fn(Vec3) -> f64) -> f64 {
        self.vertices
            .iter()
            .map(|&v| field(v).abs())
            .fold(0.0, f64::max)
    }
}
