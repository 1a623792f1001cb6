//! ASCII OBJ save/load for `TriMesh`. Coordinates are written with nine
//! significant digits; loading what was saved and saving again reproduces
//! the bytes, because printing a parsed nine-digit decimal rounds back to
//! the same decimal.

use super::{MeshError, TriMesh};
use crate::geom::Vec3;
use std::io::{BufWriter, Write};
use std::path::Path;

fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    // {:.8e} carries nine significant digits; rewrite the exponent form into
    // plain decimal so common OBJ tooling stays happy.
    let s = format!("{:.8e}", x);
    let (mantissa, exp) = s.split_once('e').expect("{:e} always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..=8).contains(&exp) {
        // Shift the decimal point directly to avoid re-rounding.
        let neg = mantissa.starts_with('-');
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        let point = exp + 1; // digits before the decimal point
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        if point <= 0 {
            out.push_str("0.");
            for _ in 0..-point {
                out.push('0');
            }
            out.push_str(&digits);
        } else if (point as usize) >= digits.len() {
            out.push_str(&digits);
            for _ in 0..point as usize - digits.len() {
                out.push('0');
            }
        } else {
            out.push_str(&digits[..point as usize]);
            out.push('.');
            out.push_str(&digits[point as usize..]);
        }
        // Trim trailing zeros after a decimal point (stable under re-print).
        if out.contains('.') {
            let trimmed = out.trim_end_matches('0').trim_end_matches('.');
            return trimmed.to_string();
        }
        out
    } else {
        let trimmed = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{trimmed}e{exp}")
    }
}

pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len())?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", fmt9(v.x), fmt9(v.y), fmt9(v.z))?;
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            writeln!(out, "vn {} {} {}", fmt9(n.x), fmt9(n.y), fmt9(n.z))?;
        }
        for f in &mesh.faces {
            writeln!(
                out,
                "f {}//{} {}//{} {}//{}",
                f[0] + 1,
                f[0] + 1,
                f[1] + 1,
                f[1] + 1,
                f[2] + 1,
                f[2] + 1
            )?;
        }
    } else {
        for f in &mesh.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fail = |msg: String| MeshError::Parse { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let tag = fields.next().expect("non-empty line has a first field");
        match tag {
            "v" | "vn" => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = fields
                        .next()
                        .ok_or_else(|| fail(format!("'{tag}' needs 3 coordinates")))?;
                    *c = tok
                        .parse()
                        .map_err(|_| fail(format!("bad coordinate '{tok}'")))?;
                }
                if fields.next().is_some() {
                    return Err(fail(format!("'{tag}' has more than 3 coordinates")));
                }
                let p = Vec3::new(coords[0], coords[1], coords[2]);
                if tag == "v" {
                    vertices.push(p);
                } else {
                    normals.push(p);
                }
            }
            "f" => {
                let mut idx = [0u32; 3];
                for v in &mut idx {
                    let tok = fields
                        .next()
                        .ok_or_else(|| fail("'f' needs 3 vertices".into()))?;
                    // Accept v, v//vn and v/vt/vn forms; only the vertex
                    // index matters for the mesh structure.
                    let first = tok.split('/').next().expect("split yields a first piece");
                    let parsed: i64 = first
                        .parse()
                        .map_err(|_| fail(format!("bad face index '{tok}'")))?;
                    if parsed < 1 {
                        return Err(fail(format!(
                            "face index {parsed} out of range (OBJ indices start at 1)"
                        )));
                    }
                    *v = (parsed - 1) as u32;
                }
                if fields.next().is_some() {
                    return Err(fail("only triangle faces are supported".into()));
                }
                faces.push(idx);
            }
            // Groups, objects, materials: ignored structure, not an error.
            "g" | "o" | "s" | "mtllib" | "usemtl" | "vt" => {}
            other => {
                return Err(fail(format!("unknown record '{other}'")));
            }
        }
    }

    let mesh = TriMesh {
        vertices,
        faces,
        normals: if normals.is_empty() { None } else { Some(normals) },
    };
    if let Some(n) = &mesh.normals {
        if n.len() != mesh.vertices.len() {
            return Err(MeshError::Invalid(format!(
                "{} normals for {} vertices",
                n.len(),
                mesh.vertices.len()
            )));
        }
    }
    let max = mesh.vertices.len() as u32;
    for (i, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&v| v >= max) {
            return Err(MeshError::Invalid(format!(
                "face {i} references vertex {} of {max}",
                f.iter().max().expect("faces have 3 entries")
            )));
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::super::{marching_cubes, sample_grid};
    use super::*;
    use crate::geom::Aabb;

    fn sphere_mesh() -> TriMesh {
        let grid = sample_grid(
            |pts| pts.iter().map(|p| p.norm() - 0.5).collect(),
            &Aabb::new(Vec3::splat(-1.0), Vec3::splat(1.0)),
            (24, 24, 24),
        )
        .unwrap();
        marching_cubes(&grid, 0.0).unwrap()
    }

    #[test]
    fn nine_digit_formatting() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(-0.5), "-0.5");
        assert_eq!(fmt9(0.125), "0.125");
        // Nine significant digits, not nine decimals.
        assert_eq!(fmt9(1234.5678901), "1234.56789");
        assert_eq!(fmt9(0.000123456789), "0.000123456789");
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        // Far outside the plain-decimal window: exponent form.
        assert_eq!(fmt9(1.5e12), "1.5e12");
        // Round-trip stability: parse then re-format is identity.
        for s in ["0.333333333", "-0.000123456789", "1234.56789", "7", "0.5"] {
            let x: f64 = s.parse().unwrap();
            assert_eq!(fmt9(x), s);
        }
    }

    #[test]
    fn round_trip_is_bitwise_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut mesh = sphere_mesh();
        mesh.compute_vertex_normals();

        let first = dir.path().join("sphere.obj");
        save_obj(&mesh, &first).unwrap();
        let loaded = load_obj(&first).unwrap();
        assert_eq!(loaded.faces, mesh.faces);
        assert_eq!(loaded.vertices.len(), mesh.vertices.len());
        assert!(loaded.normals.is_some());

        // Decimal representation is a fixed point of save -> load -> save.
        let second = dir.path().join("sphere2.obj");
        save_obj(&loaded, &second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );

        // And the parsed geometry is within print precision of the source.
        for (a, b) in mesh.vertices.iter().zip(&loaded.vertices) {
            assert!((*a - *b).norm() < 1e-7);
        }
    }

    #[test]
    fn empty_mesh_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.obj");
        save_obj(&TriMesh::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# 0 vertices, 0 faces\n");
        let loaded = load_obj(&path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");

        // OBJ face indices are 1-based; 0 is malformed.
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap();
        match load_obj(&path) {
            Err(MeshError::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("start at 1"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "v 0 0\n").unwrap();
        assert!(matches!(
            load_obj(&path),
            Err(MeshError::Parse { line: 1, .. })
        ));

        std::fs::write(&path, "v 0 0 0\nwibble 1 2\n").unwrap();
        assert!(matches!(
            load_obj(&path),
            Err(MeshError::Parse { line: 2, .. })
        ));

        // Out-of-range face index is caught structurally.
        std::fs::write(&path, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(matches!(load_obj(&path), Err(MeshError::Invalid(_))));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.obj");
        std::fs::write(
            &path,
            "# header\n\nv 0 0 0\nv 1 0 0  # inline note\nv 0 1 0\n\nf 1 2 3\n",
        )
        .unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }
}
