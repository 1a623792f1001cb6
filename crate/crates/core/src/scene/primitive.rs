//! Analytic solid primitives: exact signed distance, gradient, and the
//! interval a line cuts through each solid.
//!
//! All primitives are convex, so a line intersects each one in at most a
//! single parameter interval. Shapes are defined in a local frame and placed
//! in the world by a rigid pose; distances are preserved because the pose is
//! an isometry.

use crate::geom::{Aabb, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};

/// Tangential intersections thinner than this are treated as misses.
pub const GRAZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PrimitiveKind {
    /// Ball of `radius` centered at the local origin.
    Sphere { radius: f64 },
    /// Box with the given half extents, axis-aligned in the local frame.
    AxisBox { half_extents: Vec3 },
    /// Slab of infinite lateral extent: |z| <= half_thickness locally.
    PlaneSlab { half_thickness: f64 },
    /// Solid cylinder along the local z axis.
    CappedCylinder { radius: f64, half_height: f64 },
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::Sphere { .. } => "sphere",
            PrimitiveKind::AxisBox { .. } => "axis-box",
            PrimitiveKind::PlaneSlab { .. } => "plane-slab",
            PrimitiveKind::CappedCylinder { .. } => "capped-cylinder",
        }
    }

    /// All size parameters strictly positive?
    pub fn dimensions_valid(&self) -> bool {
        match *self {
            PrimitiveKind::Sphere { radius } => radius > 0.0,
            PrimitiveKind::AxisBox { half_extents } => {
                half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0
            }
            PrimitiveKind::PlaneSlab { half_thickness } => half_thickness > 0.0,
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub kind: PrimitiveKind,
    pub pose: RigidTransform,
    pub albedo: [f64; 3],
}

/// A single parameter interval along a line, possibly unbounded on either
/// side (a line inside an infinite slab, or running parallel to a cylinder
/// axis inside its radius).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpan {
    pub t_enter: f64,
    pub t_exit: f64,
}

impl Primitive {
    /// Exact signed distance from `p` (world) to this solid.
    pub fn sdf(&self, p: Vec3) -> f64 {
        let q = self.pose.to_local_point(p);
        match *self.kind() {
            PrimitiveKind::Sphere { radius } => q.norm() - radius,
            PrimitiveKind::AxisBox { half_extents } => {
                let d = q.abs() - half_extents;
                d.max_scalar(0.0).norm() + d.max_component().min(0.0)
            }
            PrimitiveKind::PlaneSlab { half_thickness } => q.z.abs() - half_thickness,
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => {
                let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let dz = q.z.abs() - half_height;
                let outside = Vec3::new(dr.max(0.0), dz.max(0.0), 0.0).norm();
                dr.max(dz).min(0.0) + outside
            }
        }
    }

    fn kind(&self) -> &PrimitiveKind {
        &self.kind
    }

    /// Analytic gradient of the signed distance at `p` (world frame). Unit
    /// length wherever the SDF is differentiable. Returns `None` where the
    /// gradient is genuinely ambiguous (centers, axes, edge/corner ridges,
    /// argmax ties) so callers can fall back to finite differences.
    pub fn sdf_gradient(&self, p: Vec3) -> Option<Vec3> {
        const TIE: f64 = 1e-9;
        let q = self.pose.to_local_point(p);
        let g_local = match *self.kind() {
            PrimitiveKind::Sphere { .. } => {
                let n = q.norm();
                if n < TIE {
                    return None;
                }
                q / n
            }
            PrimitiveKind::AxisBox { half_extents } => {
                let d = q.abs() - half_extents;
                let outside = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0));
                let out_norm = outside.norm();
                if out_norm > TIE {
                    // Outside region: direction from the closest box point.
                    // Ambiguous exactly on edge/corner ridges only when a
                    // component sits on a face plane (d_i == 0).
                    if d.x.abs() < TIE || d.y.abs() < TIE || d.z.abs() < TIE {
                        return None;
                    }
                    Vec3::new(
                        outside.x * sign_nonzero(q.x)?,
                        outside.y * sign_nonzero(q.y)?,
                        outside.z * sign_nonzero(q.z)?,
                    ) / out_norm
                } else {
                    // Inside: gradient points along the axis of the largest
                    // (least negative) face distance; ties are ridges.
                    let (axis, best) = argmax3(d.x, d.y, d.z);
                    let others = match axis {
                        0 => (d.y, d.z),
                        1 => (d.x, d.z),
                        _ => (d.x, d.y),
                    };
                    if (best - others.0).abs() < TIE || (best - others.1).abs() < TIE {
                        return None;
                    }
                    let s = sign_nonzero(q.component(axis))?;
                    Vec3::ZERO.with_component(axis, s)
                }
            }
            PrimitiveKind::PlaneSlab { .. } => {
                Vec3::new(0.0, 0.0, sign_nonzero(q.z)?)
            }
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => {
                let r_xy = (q.x * q.x + q.y * q.y).sqrt();
                let dr = r_xy - radius;
                let dz = q.z.abs() - half_height;
                if dr > TIE && dz > TIE {
                    // Outside the rim edge: blend of radial and axial parts.
                    if r_xy < TIE {
                        return None;
                    }
                    let v = Vec3::new(dr, dz, 0.0);
                    let vn = v.norm();
                    let radial = Vec3::new(q.x / r_xy, q.y / r_xy, 0.0);
                    (radial * (dr / vn)).with_component(2, (dz / vn) * sign_nonzero(q.z)?)
                } else if dr > TIE {
                    if r_xy < TIE {
                        return None;
                    }
                    Vec3::new(q.x / r_xy, q.y / r_xy, 0.0)
                } else if dz > TIE {
                    Vec3::new(0.0, 0.0, sign_nonzero(q.z)?)
                } else {
                    // Inside: nearest of wall vs cap; tie is the interior ridge.
                    if (dr - dz).abs() < TIE {
                        return None;
                    }
                    if dr > dz {
                        if r_xy < TIE {
                            return None;
                        }
                        Vec3::new(q.x / r_xy, q.y / r_xy, 0.0)
                    } else {
                        Vec3::new(0.0, 0.0, sign_nonzero(q.z)?)
                    }
                }
            }
        };
        Some(self.pose.to_world_dir(g_local))
    }

    /// The parameter interval the full line `o + t*r` (t over all reals)
    /// spends inside this solid, or `None` for a miss. Tangential grazes are
    /// dropped. Endpoints may be infinite for lines trapped inside an
    /// unbounded direction of the solid.
    pub fn line_span(&self, o: Vec3, r: Vec3) -> Option<LineSpan> {
        let lo = self.pose.to_local_point(o);
        let lr = self.pose.to_local_dir(r);
        match *self.kind() {
            PrimitiveKind::Sphere { radius } => {
                // |lo + t lr|^2 = R^2 with |lr| = 1.
                let b = 2.0 * lo.dot(lr);
                let c = lo.dot(lo) - radius * radius;
                let disc = b * b - 4.0 * c;
                if disc < GRAZE_EPS {
                    return None;
                }
                let sq = disc.sqrt();
                Some(LineSpan {
                    t_enter: (-b - sq) * 0.5,
                    t_exit: (-b + sq) * 0.5,
                })
            }
            PrimitiveKind::AxisBox { half_extents } => {
                slab_span(lo.x, lr.x, half_extents.x)
                    .and_then(|s| intersect_spans(s, slab_span(lo.y, lr.y, half_extents.y)?))
                    .and_then(|s| intersect_spans(s, slab_span(lo.z, lr.z, half_extents.z)?))
            }
            PrimitiveKind::PlaneSlab { half_thickness } => slab_span(lo.z, lr.z, half_thickness),
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => {
                let radial = {
                    // |lo.xy + t lr.xy|^2 = R^2; the planar direction may be
                    // degenerate when the line parallels the axis.
                    let a = lr.x * lr.x + lr.y * lr.y;
                    let b = 2.0 * (lo.x * lr.x + lo.y * lr.y);
                    let c = lo.x * lo.x + lo.y * lo.y - radius * radius;
                    if a < GRAZE_EPS {
                        if c < -GRAZE_EPS {
                            LineSpan {
                                t_enter: f64::NEG_INFINITY,
                                t_exit: f64::INFINITY,
                            }
                        } else {
                            return None;
                        }
                    } else {
                        let disc = b * b - 4.0 * a * c;
                        if disc < GRAZE_EPS {
                            return None;
                        }
                        let sq = disc.sqrt();
                        LineSpan {
                            t_enter: (-b - sq) / (2.0 * a),
                            t_exit: (-b + sq) / (2.0 * a),
                        }
                    }
                };
                let axial = slab_span(lo.z, lr.z, half_height)?;
                intersect_spans(radial, axial)
            }
        }
    }

    /// Conservative world-space bounding box. `None` for the unbounded slab.
    pub fn world_bounds(&self) -> Option<Aabb> {
        let local = match *self.kind() {
            PrimitiveKind::Sphere { radius } => Vec3::splat(radius),
            PrimitiveKind::AxisBox { half_extents } => half_extents,
            PrimitiveKind::PlaneSlab { .. } => return None,
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => Vec3::new(radius, radius, half_height),
        };
        // Extent of the rotated local box along each world axis: |R| * h.
        let rows = self.pose.rotation.rows;
        let ext = Vec3::new(
            Vec3::from_array(rows[0]).abs().dot(local),
            Vec3::from_array(rows[1]).abs().dot(local),
            Vec3::from_array(rows[2]).abs().dot(local),
        );
        Some(Aabb::new(
            self.pose.translation - ext,
            self.pose.translation + ext,
        ))
    }
}

fn sign_nonzero(x: f64) -> Option<f64> {
    if x > 1e-9 {
        Some(1.0)
    } else if x < -1e-9 {
        Some(-1.0)
    } else {
        None
    }
}

fn argmax3(a: f64, b: f64, c: f64) -> (usize, f64) {
    if a >= b && a >= c {
        (0, a)
    } else if b >= c {
        (1, b)
    } else {
        (2, c)
    }
}

/// Interval where |o + t*d| <= h on one coordinate axis. Lines lying in a
/// boundary plane (or grazing it) are dropped; lines parallel to the slab
/// strictly inside yield an unbounded span.
fn slab_span(o: f64, d: f64, h: f64) -> Option<LineSpan> {
    if d.abs() < GRAZE_EPS {
        if o.abs() < h - GRAZE_EPS {
            Some(LineSpan {
                t_enter: f64::NEG_INFINITY,
                t_exit: f64::INFINITY,
            })
        } else {
            None
        }
    } else {
        let t0 = (-h - o) / d;
        let t1 = (h - o) / d;
        Some(LineSpan {
            t_enter: t0.min(t1),
            t_exit: t0.max(t1),
        })
    }
}

fn intersect_spans(a: LineSpan, b: LineSpan) -> Option<LineSpan> {
    let t_enter = a.t_enter.max(b.t_enter);
    let t_exit = a.t_exit.min(b.t_exit);
    if t_exit - t_enter > GRAZE_EPS {
        Some(LineSpan { t_enter, t_exit })
    } else {
        None
    }
}
