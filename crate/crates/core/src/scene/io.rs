//! Scene files: a small JSON schema with explicit centers and axis-angle
//! rotations. Parse errors carry line/column positions from the JSON
//! reader; semantic problems name the offending field.

use super::{Primitive, PrimitiveKind, ProbeRay, Scene};
use crate::geom::{Aabb, Mat3, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file: {0}")]
    Io(#[from] std::io::Error),
    /// serde_json errors print "at line L column C".
    #[error("scene file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    bounds: BoundsFile,
    light_dir: [f64; 3],
    primitives: Vec<PrimitiveFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe_ray: Option<ProbeRayFile>,
}

#[derive(Serialize, Deserialize)]
struct BoundsFile {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ProbeRayFile {
    origin: [f64; 3],
    dir: [f64; 3],
}

/// One primitive entry. `rotation_axis`/`rotation_angle` (radians) are
/// optional and default to no rotation; unknown keys are ignored.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PrimitiveFile {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_axis: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_angle: Option<f64>,
    },
    AxisBox {
        center: [f64; 3],
        half_extents: [f64; 3],
        albedo: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_axis: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_angle: Option<f64>,
    },
    PlaneSlab {
        center: [f64; 3],
        half_thickness: f64,
        albedo: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_axis: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_angle: Option<f64>,
    },
    CappedCylinder {
        center: [f64; 3],
        radius: f64,
        half_height: f64,
        albedo: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_axis: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation_angle: Option<f64>,
    },
}

fn pose_from(
    center: [f64; 3],
    axis: Option<[f64; 3]>,
    angle: Option<f64>,
    path: &str,
) -> Result<RigidTransform, SceneError> {
    let rotation = match (axis, angle) {
        (None, None) => Mat3::IDENTITY,
        (Some(a), Some(ang)) => {
            let a = Vec3::from_array(a);
            if a.norm() < 1e-12 {
                return Err(SceneError::Invalid(format!(
                    "{path}.rotation_axis: must be nonzero"
                )));
            }
            Mat3::from_axis_angle(a, ang)
        }
        _ => {
            return Err(SceneError::Invalid(format!(
                "{path}: rotation_axis and rotation_angle must be given together"
            )))
        }
    };
    Ok(RigidTransform {
        rotation,
        translation: Vec3::from_array(center),
    })
}

impl PrimitiveFile {
    fn into_primitive(self, index: usize) -> Result<Primitive, SceneError> {
        let path = format!("primitives[{index}]");
        let (kind, center, albedo, axis, angle) = match self {
            PrimitiveFile::Sphere {
                center,
                radius,
                albedo,
                rotation_axis,
                rotation_angle,
            } => (
                PrimitiveKind::Sphere { radius },
                center,
                albedo,
                rotation_axis,
                rotation_angle,
            ),
            PrimitiveFile::AxisBox {
                center,
                half_extents,
                albedo,
                rotation_axis,
                rotation_angle,
            } => (
                PrimitiveKind::AxisBox {
                    half_extents: Vec3::from_array(half_extents),
                },
                center,
                albedo,
                rotation_axis,
                rotation_angle,
            ),
            PrimitiveFile::PlaneSlab {
                center,
                half_thickness,
                albedo,
                rotation_axis,
                rotation_angle,
            } => (
                PrimitiveKind::PlaneSlab { half_thickness },
                center,
                albedo,
                rotation_axis,
                rotation_angle,
            ),
            PrimitiveFile::CappedCylinder {
                center,
                radius,
                half_height,
                albedo,
                rotation_axis,
                rotation_angle,
            } => (
                PrimitiveKind::CappedCylinder {
                    radius,
                    half_height,
                },
                center,
                albedo,
                rotation_axis,
                rotation_angle,
            ),
        };
        Ok(Primitive {
            kind,
            pose: pose_from(center, axis, angle, &path)?,
            albedo,
        })
    }

    fn from_primitive(prim: &Primitive) -> PrimitiveFile {
        let center = prim.pose.translation.to_array();
        let albedo = prim.albedo;
        // Recover an axis-angle only when the pose actually rotates.
        let (rotation_axis, rotation_angle) = if prim.pose.rotation == Mat3::IDENTITY {
            (None, None)
        } else {
            let (axis, angle) = axis_angle_of(&prim.pose.rotation);
            (Some(axis.to_array()), Some(angle))
        };
        match prim.kind {
            PrimitiveKind::Sphere { radius } => PrimitiveFile::Sphere {
                center,
                radius,
                albedo,
                rotation_axis,
                rotation_angle,
            },
            PrimitiveKind::AxisBox { half_extents } => PrimitiveFile::AxisBox {
                center,
                half_extents: half_extents.to_array(),
                albedo,
                rotation_axis,
                rotation_angle,
            },
            PrimitiveKind::PlaneSlab { half_thickness } => PrimitiveFile::PlaneSlab {
                center,
                half_thickness,
                albedo,
                rotation_axis,
                rotation_angle,
            },
            PrimitiveKind::CappedCylinder {
                radius,
                half_height,
            } => PrimitiveFile::CappedCylinder {
                center,
                radius,
                half_height,
                albedo,
                rotation_axis,
                rotation_angle,
            },
        }
    }
}

/// Axis-angle extraction for an orthonormal matrix (angle in (0, pi]).
fn axis_angle_of(m: &Mat3) -> (Vec3, f64) {
    let r = &m.rows;
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let raw = Vec3::new(
        r[2][1] - r[1][2],
        r[0][2] - r[2][0],
        r[1][0] - r[0][1],
    );
    if raw.norm() > 1e-9 {
        (raw.normalized(), angle)
    } else if angle < 1e-9 {
        (Vec3::Z, 0.0)
    } else {
        // angle ~ pi, where R = 2uu^T - I: recover u from the largest
        // diagonal entry, then the matching row fixes the other signs.
        let k = if r[0][0] >= r[1][1] && r[0][0] >= r[2][2] {
            0
        } else if r[1][1] >= r[2][2] {
            1
        } else {
            2
        };
        let uk = ((r[k][k] + 1.0) * 0.5).max(0.0).sqrt();
        let mut u = [0.0; 3];
        u[k] = uk;
        for j in 0..3 {
            if j != k {
                u[j] = r[k][j] / (2.0 * uk);
            }
        }
        (Vec3::from_array(u).normalized(), std::f64::consts::PI)
    }
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path)?;
    parse_scene(&text)
}

pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let raw: SceneFile = serde_json::from_str(text)?;
    let light = Vec3::from_array(raw.light_dir);
    if light.norm() < 1e-12 {
        return Err(SceneError::Invalid("light_dir: must be nonzero".into()));
    }
    let mut primitives = Vec::with_capacity(raw.primitives.len());
    for (i, p) in raw.primitives.into_iter().enumerate() {
        primitives.push(p.into_primitive(i)?);
    }
    let scene = Scene {
        primitives,
        bounds: Aabb::new(
            Vec3::from_array(raw.bounds.min),
            Vec3::from_array(raw.bounds.max),
        ),
        light_dir: light.normalized(),
        probe_ray: raw.probe_ray.map(|p| ProbeRay {
            origin: Vec3::from_array(p.origin),
            dir: Vec3::from_array(p.dir),
        }),
    };
    scene.validate().map_err(SceneError::Invalid)?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    let raw = SceneFile {
        bounds: BoundsFile {
            min: scene.bounds.min.to_array(),
            max: scene.bounds.max.to_array(),
        },
        light_dir: scene.light_dir.to_array(),
        primitives: scene
            .primitives
            .iter()
            .map(PrimitiveFile::from_primitive)
            .collect(),
        probe_ray: scene.probe_ray.map(|p| ProbeRayFile {
            origin: p.origin.to_array(),
            dir: p.dir.to_array(),
        }),
    };
    let mut text = serde_json::to_string_pretty(&raw).expect("scene serialization");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::vec3;

    #[test]
    fn parse_minimal_scene() {
        let text = r#"{
            "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
            "light_dir": [0, 1, 0],
            "primitives": [
                {"kind": "sphere", "center": [0, 0, 0], "radius": 1.0,
                 "albedo": [0.8, 0.2, 0.2]}
            ]
        }"#;
        let scene = parse_scene(text).unwrap();
        assert_eq!(scene.primitives.len(), 1);
        assert!((scene.sdf(vec3(0.0, 0.0, 2.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\n  \"bounds\": {\"min\": [0,0,0], \"max\": [1,1,1]},\n  \"light_dir\": [0,1,0,\n}";
        let err = parse_scene(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "got: {msg}");
    }

    #[test]
    fn semantic_error_names_field() {
        let text = r#"{
            "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
            "light_dir": [0, 1, 0],
            "primitives": [
                {"kind": "sphere", "center": [0, 0, 0], "radius": -1.0,
                 "albedo": [0.8, 0.2, 0.2]}
            ]
        }"#;
        let msg = parse_scene(text).unwrap_err().to_string();
        assert!(msg.contains("primitives[0]"), "got: {msg}");
    }

    #[test]
    fn round_trip_presets() {
        let dir = tempfile::tempdir().unwrap();
        for scene in [Scene::ghost(), Scene::room()] {
            let path = dir.path().join("scene.json");
            save_scene(&scene, &path).unwrap();
            let back = load_scene(&path).unwrap();
            assert_eq!(back.primitives.len(), scene.primitives.len());
            for (a, b) in back.primitives.iter().zip(&scene.primitives) {
                assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
                let ra = a.pose.rotation.rows;
                let rb = b.pose.rotation.rows;
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((ra[i][j] - rb[i][j]).abs() < 1e-12);
                    }
                }
                assert_eq!(a.albedo, b.albedo);
            }
            assert!((back.light_dir - scene.light_dir).norm() < 1e-12);
            // Probe a few points to confirm identical geometry.
            for &p in &[vec3(0.3, 0.1, 1.7), vec3(-0.4, 0.2, 0.0), Vec3::ZERO] {
                assert!((back.sdf(p) - scene.sdf(p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = r#"{
            "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
            "light_dir": [0, 1, 0],
            "primitives": [
                {"kind": "torus", "center": [0, 0, 0], "radius": 1.0,
                 "albedo": [0.8, 0.2, 0.2]}
            ]
        }"#;
        assert!(parse_scene(text).is_err());
    }
}
