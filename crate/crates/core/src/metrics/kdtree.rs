//! Exact nearest-neighbour index for the L1 metric: a median-split k-d tree
//! over a reordered copy of the input points. A subtree is pruned only when
//! the axis gap to its splitting plane already reaches the best distance
//! found, and that gap lower-bounds the L1 distance to every point behind
//! the plane — so query results are bit-identical to brute force.

use crate::geom::Vec3;
use rayon::prelude::*;

/// Balanced k-d tree stored implicitly: the median of each slice is its
/// root, the two halves recurse, and the split axis cycles x → y → z with
/// depth. Coordinate ties order by original index, so the layout is a pure
/// function of the input.
#[derive(Debug, Clone)]
pub struct KdTree {
    pts: Vec<Vec3>,
    /// Original position of each stored point.
    idx: Vec<u32>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> KdTree {
        assert!(!points.is_empty(), "kd-tree needs at least one point");
        assert!(points.len() <= u32::MAX as usize, "kd-tree index type caps at u32");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        let pts = order.iter().map(|&i| points[i as usize]).collect();
        KdTree { pts, idx: order }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Original index of the nearest stored point and its L1 distance.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        self.search(q, 0, self.pts.len(), 0, &mut best);
        (self.idx[best.0] as usize, best.1)
    }

    /// `nearest` over many queries in parallel; output order matches input.
    pub fn nearest_many(&self, queries: &[Vec3]) -> Vec<(usize, f64)> {
        queries.par_iter().map(|&q| self.nearest(q)).collect()
    }

    fn search(&self, q: Vec3, lo: usize, hi: usize, axis: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.pts[mid];
        let d = (q - p).norm_l1();
        if d < best.1 {
            *best = (mid, d);
        }
        let gap = q.component(axis) - p.component(axis);
        let next = (axis + 1) % 3;
        let (near, far) = if gap < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, next, best);
        if gap.abs() < best.1 {
            self.search(q, far.0, far.1, next, best);
        }
    }
}

fn build_range(points: &[Vec3], order: &mut [u32], axis: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let (pa, pb) = (points[a as usize], points[b as usize]);
        pa.component(axis)
            .total_cmp(&pb.component(axis))
            .then(a.cmp(&b))
    });
    let next = (axis + 1) % 3;
    let (left, rest) = order.split_at_mut(mid);
    build_range(points, left, next);
    build_range(points, &mut rest[1..], next);
}
