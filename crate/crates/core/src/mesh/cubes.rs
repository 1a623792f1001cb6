//! Marching cubes over a `ScalarGrid`. The 256-entry case table is built
//! once from first principles instead of being transcribed: for each sign
//! configuration the isosurface crossings on each cube face are paired into
//! directed chords, the chords chained into closed loops, and the loops fan
//! triangulated. Because the chord pairing on a face depends only on that
//! face's corner signs (ambiguous faces always cut off the inside corners),
//! two cubes sharing a face always agree on it, which makes interior
//! isosurfaces watertight by construction.

use super::{MeshError, ScalarGrid, TriMesh};
use crate::geom::Vec3;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::OnceLock;

// Corner i sits at offset (i & 1, i >> 1 & 1, i >> 2 & 1): x bit first,
// matching the grid's x-fastest layout.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

// Twelve cube edges as corner pairs, grouped by axis: 0..4 run along x,
// 4..8 along y, 8..12 along z. The group index doubles as the axis id when
// naming an edge globally.
const EDGE: [[usize; 2]; 12] = [
    [0, 1],
    [2, 3],
    [4, 5],
    [6, 7],
    [0, 2],
    [1, 3],
    [4, 6],
    [5, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

// Face corner cycles, counterclockwise when viewed from outside the cube.
// Traversed this way, two adjacent faces walk their shared edge in opposite
// directions, which the chord-direction rule below relies on.
const FACE: [[usize; 4]; 6] = [
    [1, 3, 7, 5], // +x
    [0, 4, 6, 2], // -x
    [2, 6, 7, 3], // +y
    [0, 1, 5, 4], // -y
    [4, 5, 7, 6], // +z
    [0, 2, 3, 1], // -z
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGE.iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("face cycles only walk cube edges")
}

/// Triangulations per sign configuration, as local edge-index triples wound
/// so the right-hand normal points toward the positive side.
fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

fn build_case(config: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| config & (1 << c) != 0;

    // Directed chords: on each face, walk the corner cycle and connect every
    // outside-to-inside crossing to the next crossing along the cycle (an
    // inside-to-outside one). With four crossings this pairs each chord with
    // the inside corner it cuts off — a choice readable from the face's own
    // signs, hence identical for the neighboring cube.
    let mut next = [usize::MAX; 12];
    for face in &FACE {
        let mut cuts: Vec<(usize, bool)> = Vec::new(); // (edge, enters inside)
        for k in 0..4 {
            let (p, q) = (face[k], face[(k + 1) % 4]);
            if inside(p) != inside(q) {
                cuts.push((edge_between(p, q), !inside(p)));
            }
        }
        for k in 0..cuts.len() {
            let (edge, enters) = cuts[k];
            if enters {
                let (to, to_enters) = cuts[(k + 1) % cuts.len()];
                debug_assert!(!to_enters, "crossings must alternate around a face");
                debug_assert_eq!(next[edge], usize::MAX);
                next[edge] = to;
            }
        }
    }

    // Every cut edge has exactly one outgoing and one incoming chord, so the
    // chords decompose into closed loops; fan each loop into triangles.
    let mut triangles = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut ring = vec![start];
        visited[start] = true;
        let mut cur = next[start];
        while cur != start {
            debug_assert!(!visited[cur], "chords must form simple loops");
            visited[cur] = true;
            ring.push(cur);
            cur = next[cur];
        }
        debug_assert!(ring.len() >= 3);
        for k in 1..ring.len() - 1 {
            triangles.push([ring[0] as u8, ring[k] as u8, ring[k + 1] as u8]);
        }
    }
    triangles
}

/// A grid edge named globally by its axis and the lattice coordinates of its
/// lower corner; the shared currency for welding vertices across cubes.
type EdgeKey = (u8, u32, u32, u32);

fn global_edge(local: usize, cx: usize, cy: usize, cz: usize) -> EdgeKey {
    let axis = (local / 4) as u8;
    let [ox, oy, oz] = CORNER[EDGE[local][0]];
    ((axis), (cx + ox) as u32, (cy + oy) as u32, (cz + oz) as u32)
}

/// Extract the `iso` level set of the grid as a triangle mesh. Vertices sit
/// on grid edges at the linear interpolation of the corner values; faces
/// wind with normals toward values above `iso`. A grid without a sign
/// change yields an empty mesh.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriMesh, MeshError> {
    if grid.values.iter().any(|v| v.is_nan()) {
        return Err(MeshError::NanInGrid);
    }
    let table = case_table();
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);

    // Phase 1, parallel over z-slabs of cubes: emit triangles as global edge
    // keys. Indexed collection keeps the concatenation order deterministic.
    let slabs: Vec<Vec<[EdgeKey; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|cz| {
            let mut out = Vec::new();
            for cy in 0..ny - 1 {
                for cx in 0..nx - 1 {
                    let mut config = 0usize;
                    for (c, off) in CORNER.iter().enumerate() {
                        // Inside means strictly below the level; exact hits
                        // count as outside so easy grids stay degenerate-free.
                        if grid.value(cx + off[0], cy + off[1], cz + off[2]) < iso {
                            config |= 1 << c;
                        }
                    }
                    for tri in &table[config] {
                        out.push([
                            global_edge(tri[0] as usize, cx, cy, cz),
                            global_edge(tri[1] as usize, cx, cy, cz),
                            global_edge(tri[2] as usize, cx, cy, cz),
                        ]);
                    }
                }
            }
            out
        })
        .collect();

    // Phase 2, sequential: weld vertices in first-seen order and interpolate
    // each grid edge exactly once.
    let mut index_of: HashMap<EdgeKey, u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut vertex_for = |key: EdgeKey, vertices: &mut Vec<Vec3>| -> u32 {
        *index_of.entry(key).or_insert_with(|| {
            let (axis, ix, iy, iz) = key;
            let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
            let (jx, jy, jz) = match axis {
                0 => (ix + 1, iy, iz),
                1 => (ix, iy + 1, iz),
                _ => (ix, iy, iz + 1),
            };
            let (va, vb) = (grid.value(ix, iy, iz), grid.value(jx, jy, jz));
            let (pa, pb) = (grid.point(ix, iy, iz), grid.point(jx, jy, jz));
            let t = (iso - va) / (vb - va);
            vertices.push(pa + t * (pb - pa));
            (vertices.len() - 1) as u32
        })
    };
    for tri in slabs.iter().flatten() {
        let face = [
            vertex_for(tri[0], &mut vertices),
            vertex_for(tri[1], &mut vertices),
            vertex_for(tri[2], &mut vertices),
        ];
        faces.push(face);
    }

    let mut mesh = TriMesh {
        vertices,
        faces,
        normals: None,
    };
    // Exact-zero corners can collapse a triangle onto a grid point; drop
    // such slivers rather than hand them to area-sensitive consumers.
    mesh.faces = (0..mesh.faces.len())
        .filter(|&f| mesh.face_area(f) > 1e-12)
        .map(|f| mesh.faces[f])
        .collect();
    Ok(mesh)
}
