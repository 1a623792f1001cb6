//! Built-in scenes used by the demos and the test suite.

use super::{Primitive, PrimitiveKind, ProbeRay, Scene};
use crate::geom::{vec3, Aabb, Mat3, RigidTransform, Vec3};
use std::f64::consts::FRAC_PI_2;

impl Scene {
    /// Occlusion demo: the probe ray passes a cylinder at small lateral
    /// clearance (never touching it) before hitting a box face straight on.
    /// A distance field that measures "nearest surface anywhere" bulges near
    /// the cylinder even though the ray misses it, so density derived from
    /// plain signed distance shows a phantom bump there; density derived
    /// from ray distance does not.
    pub fn ghost() -> Scene {
        let wall = Primitive {
            kind: PrimitiveKind::AxisBox {
                half_extents: vec3(1.2, 1.0, 0.15),
            },
            pose: RigidTransform::translation(vec3(0.0, 0.0, 4.0)),
            albedo: [0.25, 0.75, 0.35],
        };
        // Axis along world y (local z rotated about x by -pi/2); the probe
        // ray passes at lateral distance 0.33 - 0.25 = 0.08 from its wall.
        let post = Primitive {
            kind: PrimitiveKind::CappedCylinder {
                radius: 0.25,
                half_height: 0.8,
            },
            pose: RigidTransform {
                rotation: Mat3::from_axis_angle(Vec3::X, -FRAC_PI_2),
                translation: vec3(0.33, 0.0, 2.0),
            },
            albedo: [0.25, 0.4, 0.85],
        };
        Scene {
            primitives: vec![wall, post],
            bounds: Aabb::new(vec3(-2.5, -2.5, -0.5), vec3(2.5, 2.5, 5.5)),
            light_dir: vec3(0.3, 1.0, -0.45).normalized(),
            probe_ray: Some(ProbeRay {
                origin: Vec3::ZERO,
                dir: Vec3::Z,
            }),
        }
    }

    /// Two-object reconstruction target: a sphere and a tilted box with a
    /// clear gap between them, comfortably inside the bounds.
    pub fn room() -> Scene {
        let ball = Primitive {
            kind: PrimitiveKind::Sphere { radius: 0.4 },
            pose: RigidTransform::translation(vec3(-0.45, 0.0, 0.05)),
            albedo: [0.85, 0.25, 0.2],
        };
        let crate_box = Primitive {
            kind: PrimitiveKind::AxisBox {
                half_extents: vec3(0.3, 0.28, 0.35),
            },
            pose: RigidTransform {
                rotation: Mat3::from_axis_angle(Vec3::Y, 0.4),
                translation: vec3(0.45, 0.02, -0.05),
            },
            albedo: [0.2, 0.45, 0.85],
        };
        Scene {
            primitives: vec![ball, crate_box],
            bounds: Aabb::new(Vec3::splat(-1.3), Vec3::splat(1.3)),
            light_dir: vec3(0.4, 1.0, 0.6).normalized(),
            probe_ray: Some(ProbeRay {
                origin: vec3(-0.45, 0.0, -2.0),
                dir: Vec3::Z,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Scene::ghost().validate().unwrap();
        Scene::room().validate().unwrap();
    }

    #[test]
    fn ghost_probe_ray_misses_post_but_hits_wall() {
        let s = Scene::ghost();
        let (o, r) = s.probe_ray_normalized();
        let hits = s.ray_hits(o, r);
        assert_eq!(hits.len(), 2, "only the wall crosses the probe line");
        assert!((hits[0].t - 3.85).abs() < 1e-12);
        assert!((hits[1].t - 4.15).abs() < 1e-12);
        assert_eq!(hits[0].primitive, 0);
        // Yet the plain distance field dips to the post clearance midway.
        let mid = o + r * 2.0;
        assert!((s.sdf(mid) - 0.08).abs() < 1e-12);
    }

    #[test]
    fn room_objects_are_disjoint() {
        let s = Scene::room();
        // Between the two objects the union SDF stays positive.
        for i in 0..=20 {
            let x = -0.05 + 0.08 * i as f64 / 20.0;
            assert!(s.sdf(vec3(x, 0.0, 0.0)) > 0.0);
        }
    }
}
