//! Analytic ground-truth scenes: exact signed distance, signed ray distance,
//! line intersections, visibility, and shaded color for unions of solid
//! primitives. Everything here is closed-form, so it can serve as the oracle
//! that learned fields are tested against.

mod io;
mod presets;
mod primitive;

pub use io::{load_scene, save_scene, SceneError};
pub use primitive::{LineSpan, Primitive, PrimitiveKind, GRAZE_EPS};

use crate::camera::Camera;
use crate::geom::{Aabb, Vec3};
use serde::{Deserialize, Serialize};

/// Color composited behind all geometry, linear RGB.
pub const BACKGROUND_RGB: [f64; 3] = [0.08, 0.08, 0.10];

/// Hits closer together than this along a ray are merged (shared faces of
/// abutting solids, duplicate union boundaries).
pub const HIT_DEDUP_EPS: f64 = 1e-9;

/// Points with |sdf| at or below this are treated as outside when deciding
/// occupancy (the on-surface indicator is otherwise ambiguous).
pub const SURFACE_EPS: f64 = 1e-9;

/// A ray the plotting tools probe by default, stored with the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRay {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// Union of solid primitives inside an enclosing box, lit by one
/// directional light. Immutable after construction; all queries are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub bounds: Aabb,
    /// Unit vector pointing from surfaces toward the light.
    pub light_dir: Vec3,
    pub probe_ray: Option<ProbeRay>,
}

/// One crossing of the union boundary along a line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; may be negative (the full line is intersected).
    pub t: f64,
    /// Unit outward normal at the crossing point.
    pub normal: Vec3,
    /// True when the line passes from outside to inside at `t`.
    pub entering: bool,
    /// Index of the primitive owning this piece of boundary.
    pub primitive: usize,
}

impl Scene {
    /// Signed distance from `p` to the union: min over primitive SDFs.
    /// Exact for a single primitive and everywhere outside overlap seams;
    /// inside overlaps it is a (still negative) upper bound on depth.
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn occupied(&self, p: Vec3) -> bool {
        self.sdf(p) < -SURFACE_EPS
    }

    /// Unit gradient of the union SDF. Analytic when the nearest primitive
    /// is unique and its own gradient is well defined; otherwise falls back
    /// to a normalized central-difference estimate.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        const TIE: f64 = 1e-9;
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        let mut best_idx = 0;
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.sdf(p);
            if d < best {
                second = best;
                best = d;
                best_idx = i;
            } else if d < second {
                second = d;
            }
        }
        if second - best > TIE {
            if let Some(g) = self.primitives[best_idx].sdf_gradient(p) {
                return g;
            }
        }
        self.fd_normal(p)
    }

    /// Central-difference gradient of the union SDF, normalized. Used at
    /// seams and ridge points where the analytic form is ambiguous.
    pub fn fd_normal(&self, p: Vec3) -> Vec3 {
        let h = 1e-5;
        let mut g = Vec3::ZERO;
        for axis in 0..3 {
            let e = Vec3::ZERO.with_component(axis, h);
            g = g.with_component(axis, (self.sdf(p + e) - self.sdf(p - e)) / (2.0 * h));
        }
        let n = g.norm();
        if n < 1e-12 {
            // Exactly on a symmetric ridge; any unit vector is as wrong as
            // another, so pick a fixed one deterministically.
            Vec3::Z
        } else {
            g / n
        }
    }

    /// Every crossing of the union boundary by the full line `o + t*r`,
    /// sorted ascending in t, entering/exiting strictly alternating.
    /// Per-primitive spans are merged with union boolean logic; boundaries
    /// closer than `HIT_DEDUP_EPS` collapse (shared faces disappear).
    pub fn ray_hits(&self, o: Vec3, r: Vec3) -> Vec<Hit> {
        // (t_enter, t_exit, primitive index), possibly infinite endpoints.
        let mut spans: Vec<(LineSpan, usize)> = self
            .primitives
            .iter()
            .enumerate()
            .filter_map(|(i, prim)| prim.line_span(o, r).map(|s| (s, i)))
            .collect();
        spans.sort_by(|a, b| {
            a.0.t_enter
                .partial_cmp(&b.0.t_enter)
                .unwrap()
                .then(a.1.cmp(&b.1))
        });

        let mut hits = Vec::new();
        let mut iter = spans.into_iter();
        let Some((first, first_idx)) = iter.next() else {
            return hits;
        };
        // Current merged span and the primitives owning its two endpoints.
        let mut enter = (first.t_enter, first_idx);
        let mut exit = (first.t_exit, first_idx);
        let flush = |enter: (f64, usize), exit: (f64, usize), hits: &mut Vec<Hit>| {
            if enter.0.is_finite() {
                hits.push(self.boundary_hit(o, r, enter.0, enter.1, true));
            }
            if exit.0.is_finite() {
                hits.push(self.boundary_hit(o, r, exit.0, exit.1, false));
            }
        };
        for (span, idx) in iter {
            if span.t_enter <= exit.0 + HIT_DEDUP_EPS {
                if span.t_exit > exit.0 {
                    exit = (span.t_exit, idx);
                }
            } else {
                flush(enter, exit, &mut hits);
                enter = (span.t_enter, idx);
                exit = (span.t_exit, idx);
            }
        }
        flush(enter, exit, &mut hits);
        hits
    }

    fn boundary_hit(&self, o: Vec3, r: Vec3, t: f64, prim: usize, entering: bool) -> Hit {
        let p = o + r * t;
        let normal = self.primitives[prim]
            .sdf_gradient(p)
            .unwrap_or_else(|| self.fd_normal(p));
        Hit {
            t,
            normal,
            entering,
            primitive: prim,
        }
    }

    /// Signed ray distance: the smallest |t| at which the line through `p`
    /// along `r` meets the union boundary, negated when `p` is inside. With
    /// no boundary in either direction the magnitude is clamped to the
    /// bounds diagonal (keeps downstream densities at essentially zero).
    pub fn srdf(&self, p: Vec3, r: Vec3) -> f64 {
        let hits = self.ray_hits(p, r);
        let magnitude = hits
            .iter()
            .map(|h| h.t.abs())
            .fold(f64::INFINITY, f64::min)
            .min(self.bounds.diagonal());
        if self.occupied(p) {
            -magnitude
        } else {
            magnitude
        }
    }

    /// First surface along the positive ray direction: the entering hit with
    /// the smallest t > 0, if any.
    pub fn first_surface(&self, o: Vec3, r: Vec3) -> Option<Hit> {
        self.ray_hits(o, r)
            .into_iter()
            .find(|h| h.entering && h.t > 0.0)
    }

    /// True when depth `z` along the ray lies strictly in front of the first
    /// surface (rays that hit nothing see everything).
    pub fn visible(&self, o: Vec3, r: Vec3, z: f64) -> bool {
        match self.first_surface(o, r) {
            Some(hit) => z < hit.t,
            None => true,
        }
    }

    /// Lambertian shade with a 0.2 ambient floor.
    pub fn shade(&self, albedo: [f64; 3], normal: Vec3) -> [f64; 3] {
        let lambert = normal.dot(self.light_dir).max(0.0);
        let s = 0.2 + 0.8 * lambert;
        [albedo[0] * s, albedo[1] * s, albedo[2] * s]
    }

    /// Ground-truth rendering of one pixel: shaded color, depth of the first
    /// surface, and world normal. Background pixels get the fixed background
    /// color, the depth where the ray leaves the scene bounds, and a normal
    /// pointing back along the ray.
    pub fn oracle_pixel(&self, camera: &Camera, u: usize, v: usize) -> ([f64; 3], f64, Vec3) {
        let (o, r) = camera.pixel_ray(u, v);
        match self.first_surface(o, r) {
            Some(hit) => {
                let albedo = self.primitives[hit.primitive].albedo;
                (self.shade(albedo, hit.normal), hit.t, hit.normal)
            }
            None => (BACKGROUND_RGB, self.background_depth(o, r), -r),
        }
    }

    /// Depth recorded for rays that miss all geometry: the parameter where
    /// the ray exits the scene bounds (diagonal length if it never enters).
    pub fn background_depth(&self, o: Vec3, r: Vec3) -> f64 {
        match self.bounds.ray_range(o, r) {
            Some((_, t_exit)) if t_exit > 0.0 => t_exit,
            _ => self.bounds.diagonal(),
        }
    }

    /// Structural checks shared by file loading and programmatic setup.
    pub fn validate(&self) -> Result<(), String> {
        if self.primitives.is_empty() {
            return Err("scene has no primitives".into());
        }
        if !self.bounds.is_valid() {
            return Err("bounds min must be strictly below max on every axis".into());
        }
        if (self.light_dir.norm() - 1.0).abs() > 1e-9 {
            return Err(format!(
                "light_dir must be unit length, got norm {}",
                self.light_dir.norm()
            ));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            let path = format!("primitives[{i}]");
            if !prim.kind.dimensions_valid() {
                return Err(format!("{path}: all dimensions must be strictly positive"));
            }
            let res = prim.pose.rotation.orthonormality_residual();
            if res >= 1e-9 {
                return Err(format!(
                    "{path}: rotation is not orthonormal (residual {res:.3e})"
                ));
            }
            for (c, &a) in prim.albedo.iter().enumerate() {
                if !(0.0..=1.0).contains(&a) {
                    return Err(format!("{path}.albedo[{c}]: {a} outside [0,1]"));
                }
            }
            match prim.world_bounds() {
                Some(bb) => {
                    if !(self.bounds.contains(bb.min) && self.bounds.contains(bb.max)) {
                        return Err(format!("{path}: extends outside scene bounds"));
                    }
                }
                // Slabs are laterally unbounded; require only that their
                // center sits inside the scene box.
                None => {
                    if !self.bounds.contains(prim.pose.translation) {
                        return Err(format!("{path}: center lies outside scene bounds"));
                    }
                }
            }
        }
        if let Some(probe) = &self.probe_ray {
            if probe.dir.norm() < 1e-12 {
                return Err("probe_ray.dir must be nonzero".into());
            }
        }
        Ok(())
    }

    /// The probe ray stored with the scene, direction normalized, or a
    /// default ray along +z from the bounds' -z face center.
    pub fn probe_ray_normalized(&self) -> (Vec3, Vec3) {
        match &self.probe_ray {
            Some(p) => (p.origin, p.dir.normalized()),
            None => {
                let c = self.bounds.center();
                (Vec3::new(c.x, c.y, self.bounds.min.z), Vec3::Z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{vec3, Mat3, RigidTransform};

    fn unit_sphere_at(center: Vec3) -> Primitive {
        Primitive {
            kind: PrimitiveKind::Sphere { radius: 1.0 },
            pose: RigidTransform {
                rotation: Mat3::IDENTITY,
                translation: center,
            },
            albedo: [0.8, 0.2, 0.2],
        }
    }

    fn one_sphere_scene() -> Scene {
        Scene {
            primitives: vec![unit_sphere_at(vec3(0.0, 0.0, 3.0))],
            bounds: Aabb::new(vec3(-3.0, -3.0, -1.0), vec3(3.0, 3.0, 6.0)),
            light_dir: Vec3::Y,
            probe_ray: None,
        }
    }

    #[test]
    fn sdf_hand_values() {
        let s = Scene {
            primitives: vec![unit_sphere_at(Vec3::ZERO)],
            bounds: Aabb::new(Vec3::splat(-2.0), Vec3::splat(2.0)),
            light_dir: Vec3::Y,
            probe_ray: None,
        };
        assert!((s.sdf(vec3(0.0, 0.0, 2.0)) - 1.0).abs() < 1e-15);
        assert!((s.sdf(Vec3::ZERO) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_hand_values() {
        let s = Scene {
            primitives: vec![unit_sphere_at(Vec3::ZERO)],
            bounds: Aabb::new(Vec3::splat(-4.0), Vec3::splat(4.0)),
            light_dir: Vec3::Y,
            probe_ray: None,
        };
        assert!((s.normal(vec3(0.0, 0.0, 2.0)) - Vec3::Z).norm() < 1e-9);
        assert!((s.normal(vec3(2.0, 0.0, 0.0)) - Vec3::X).norm() < 1e-9);
    }

    #[test]
    fn ray_hits_single_sphere() {
        let s = one_sphere_scene();
        let hits = s.ray_hits(Vec3::ZERO, Vec3::Z);
        assert_eq!(hits.len(), 2);
        assert!((hits[0].t - 2.0).abs() < 1e-12 && hits[0].entering);
        assert!((hits[1].t - 4.0).abs() < 1e-12 && !hits[1].entering);
        // Outward normals: front face toward the origin, back face away.
        assert!((hits[0].normal + Vec3::Z).norm() < 1e-9);
        assert!((hits[1].normal - Vec3::Z).norm() < 1e-9);
        assert!(s.ray_hits(Vec3::ZERO, Vec3::X).is_empty());
    }

    #[test]
    fn ray_hits_two_disjoint_spheres_alternate() {
        let s = Scene {
            primitives: vec![
                unit_sphere_at(vec3(0.0, 0.0, 3.0)),
                unit_sphere_at(vec3(0.0, 0.0, 8.0)),
            ],
            bounds: Aabb::new(vec3(-3.0, -3.0, -1.0), vec3(3.0, 3.0, 11.0)),
            light_dir: Vec3::Y,
            probe_ray: None,
        };
        let hits = s.ray_hits(Vec3::ZERO, Vec3::Z);
        assert_eq!(hits.len(), 4);
        let ts: Vec<f64> = hits.iter().map(|h| h.t).collect();
        for (t, want) in ts.iter().zip([2.0, 4.0, 7.0, 9.0]) {
            assert!((t - want).abs() < 1e-12);
        }
        for (i, h) in hits.iter().enumerate() {
            assert_eq!(h.entering, i % 2 == 0);
        }
    }

    #[test]
    fn overlapping_spheres_merge_to_one_span() {
        let s = Scene {
            primitives: vec![
                unit_sphere_at(vec3(0.0, 0.0, 3.0)),
                unit_sphere_at(vec3(0.0, 0.0, 4.0)),
            ],
            bounds: Aabb::new(vec3(-3.0, -3.0, -1.0), vec3(3.0, 3.0, 7.0)),
            light_dir: Vec3::Y,
            probe_ray: None,
        };
        let hits = s.ray_hits(Vec3::ZERO, Vec3::Z);
        assert_eq!(hits.len(), 2);
        assert!((hits[0].t - 2.0).abs() < 1e-12 && hits[0].entering);
        assert!((hits[1].t - 5.0).abs() < 1e-12 && !hits[1].entering);
        // The interior boundaries at t=4 (exit of first) and t=3 (entry of
        // second) are swallowed by the union.
    }

    #[test]
    fn srdf_hand_values() {
        let s = one_sphere_scene();
        assert!((s.srdf(vec3(0.0, 0.0, 1.0), Vec3::Z) - 1.0).abs() < 1e-12);
        assert!((s.srdf(vec3(0.0, 0.0, 2.5), Vec3::Z) + 0.5).abs() < 1e-12);
        // Past the sphere: nearest boundary is behind (t = -1), still +1.
        assert!((s.srdf(vec3(0.0, 0.0, 5.0), Vec3::Z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn srdf_no_hit_clamps_to_diagonal() {
        let s = one_sphere_scene();
        let d = s.srdf(vec3(0.0, 2.5, 0.0), Vec3::X);
        assert!((d - s.bounds.diagonal()).abs() < 1e-12);
        assert!(d > 0.0);
    }

    #[test]
    fn visibility_hand_values() {
        let s = one_sphere_scene();
        assert!(s.visible(Vec3::ZERO, Vec3::Z, 1.5));
        assert!(!s.visible(Vec3::ZERO, Vec3::Z, 3.0));
        assert!(s.visible(Vec3::ZERO, Vec3::X, 100.0));
    }

    #[test]
    fn oracle_pixel_frontal_hit_and_background() {
        let s = one_sphere_scene();
        let cam = Camera::look_at(
            Vec3::ZERO,
            vec3(0.0, 0.0, 3.0),
            Vec3::Y,
            std::f64::consts::FRAC_PI_3,
            65,
            65,
        )
        .unwrap();
        // Center pixel of an odd-sized image looks straight down +z.
        let (rgb, depth, normal) = s.oracle_pixel(&cam, 32, 32);
        assert!((depth - 2.0).abs() < 1e-9);
        let (_, r) = cam.pixel_ray(32, 32);
        assert!((normal + r).norm() < 1e-9, "frontal normal antiparallel");
        // Light is +y, normal is -z: pure ambient on all channels.
        assert!((rgb[0] - 0.8 * 0.2).abs() < 1e-12);
        // Corner pixel misses the sphere.
        let (rgb, depth, normal) = s.oracle_pixel(&cam, 0, 0);
        assert_eq!(rgb, BACKGROUND_RGB);
        let (o, r) = cam.pixel_ray(0, 0);
        let (_, t_exit) = s.bounds.ray_range(o, r).unwrap();
        assert!((depth - t_exit).abs() < 1e-12);
        assert!((normal + r).norm() < 1e-12);
    }

    #[test]
    fn validate_catches_bad_scenes() {
        let mut s = one_sphere_scene();
        s.light_dir = vec3(0.0, 2.0, 0.0);
        assert!(s.validate().unwrap_err().contains("light_dir"));

        let mut s = one_sphere_scene();
        s.primitives.clear();
        assert!(s.validate().is_err());

        let mut s = one_sphere_scene();
        s.primitives[0].pose.translation = vec3(0.0, 0.0, 40.0);
        assert!(s.validate().unwrap_err().contains("outside scene bounds"));

        let mut s = one_sphere_scene();
        s.primitives[0].kind = PrimitiveKind::Sphere { radius: -1.0 };
        assert!(s.validate().unwrap_err().contains("strictly positive"));

        assert!(one_sphere_scene().validate().is_ok());
    }
}
