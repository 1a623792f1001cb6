//! Whole-image rendering over a camera, plus the PPM/PGM writers and
//! readers. Density modes march rays through the neural field with a
//! coarse stratified pass refined by importance samples; oracle mode
//! shades analytic surface hits directly.

use super::{
    composite_over_background, density_from_sdf, density_from_srdf, importance_depths,
    merge_depths, quadrature, render_color, render_depth, render_normal, stratified_depths,
    DensityPair, RaySamples, RenderError,
};
use crate::camera::Camera;
use crate::field::FieldParams;
use crate::geom::Vec3;
use crate::scene::{Scene, BACKGROUND_RGB};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// Knobs for density-mode rendering. Chunking is a batching detail only:
/// results are identical for any chunk size or worker count.
#[derive(Debug, Clone)]
pub struct RenderConfig {
    pub coarse_samples: usize,
    pub fine_samples: usize,
    /// Rays never start closer than this to the eye.
    pub near_min: f64,
    pub seed: u64,
    /// Central-difference step for surface normals.
    pub grad_step: f64,
    pub chunk_pixels: usize,
}

impl Default for RenderConfig {
    fn default() -> RenderConfig {
        RenderConfig {
            coarse_samples: 64,
            fine_samples: 32,
            near_min: 1e-3,
            seed: 0,
            grad_step: 1e-3,
            chunk_pixels: 64,
        }
    }
}

/// What drives the per-pixel values.
pub enum RenderMode<'a> {
    /// Field geometry distance through the Laplace density.
    SdfDensity {
        params: &'a FieldParams,
        density: &'a DensityPair,
    },
    /// Field signed ray distance through the Laplace density.
    SrdfDensity {
        params: &'a FieldParams,
        density: &'a DensityPair,
    },
    /// Analytic scene, surface-shaded (no quadrature).
    Oracle { scene: &'a Scene },
}

/// One rendered view: linear-light rgb, depth, unit normals, opacity.
#[derive(Debug, Clone)]
pub struct ImageBundle {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub opacity: Vec<f64>,
}

impl ImageBundle {
    pub fn save_color(&self, path: &Path) -> Result<(), RenderError> {
        write_ppm(path, self.width, self.height, &self.rgb, 2.2)
    }

    /// Normals mapped from [-1, 1] to [0, 1], written without gamma.
    pub fn save_normal(&self, path: &Path) -> Result<(), RenderError> {
        let mapped: Vec<[f64; 3]> = self
            .normal
            .iter()
            .map(|n| [0.5 * (n.x + 1.0), 0.5 * (n.y + 1.0), 0.5 * (n.z + 1.0)])
            .collect();
        write_ppm(path, self.width, self.height, &mapped, 1.0)
    }

    pub fn save_depth(&self, path: &Path) -> Result<(), RenderError> {
        let max = self.depth.iter().cloned().fold(0.0f64, f64::max);
        let scale = if max > 0.0 { max } else { 1.0 };
        write_pgm16(path, self.width, self.height, &self.depth, scale)
    }
}

struct PixelOut {
    rgb: [f64; 3],
    depth: f64,
    normal: Vec3,
    opacity: f64,
}

pub fn render_image(mode: &RenderMode, camera: &Camera, cfg: &RenderConfig) -> ImageBundle {
    let npix = camera.pixel_count();
    let width = camera.width;
    let height = camera.height;
    let pixels: Vec<PixelOut> = (0..npix)
        .into_par_iter()
        .chunks(cfg.chunk_pixels.max(1))
        .flat_map(|chunk| match mode {
            RenderMode::Oracle { scene } => oracle_chunk(scene, camera, &chunk),
            RenderMode::SdfDensity { params, density } => {
                field_chunk(params, density, camera, &chunk, cfg, false)
            }
            RenderMode::SrdfDensity { params, density } => {
                field_chunk(params, density, camera, &chunk, cfg, true)
            }
        })
        .collect();

    let mut bundle = ImageBundle {
        width,
        height,
        rgb: Vec::with_capacity(npix),
        depth: Vec::with_capacity(npix),
        normal: Vec::with_capacity(npix),
        opacity: Vec::with_capacity(npix),
    };
    for p in pixels {
        bundle.rgb.push(p.rgb);
        bundle.depth.push(p.depth);
        bundle.normal.push(p.normal);
        bundle.opacity.push(p.opacity);
    }
    bundle
}

fn oracle_chunk(scene: &Scene, camera: &Camera, chunk: &[usize]) -> Vec<PixelOut> {
    chunk
        .iter()
        .map(|&idx| {
            let (u, v) = (idx % camera.width, idx / camera.width);
            let (rgb, depth, normal) = scene.oracle_pixel(camera, u, v);
            let (o, r) = camera.pixel_ray(u, v);
            let opacity = if scene.first_surface(o, r).is_some() {
                1.0
            } else {
                0.0
            };
            PixelOut {
                rgb,
                depth,
                normal,
                opacity,
            }
        })
        .collect()
}

/// Density-mode rendering for one chunk of pixels. Field evaluations are
/// batched across the whole chunk; per-pixel depth draws come from a
/// stream-split generator so the result is chunking-independent.
fn field_chunk(
    params: &FieldParams,
    density: &DensityPair,
    camera: &Camera,
    chunk: &[usize],
    cfg: &RenderConfig,
    srdf_mode: bool,
) -> Vec<PixelOut> {
    let bounds = &params.bounds;
    let diagonal = bounds.diagonal();
    let dparams = if srdf_mode {
        density.srdf_params()
    } else {
        &density.sdf
    };

    // Rays that actually cross the bounds; the rest are pure background.
    struct Ray {
        slot: usize,
        origin: Vec3,
        dir: Vec3,
        far: f64,
        samples: RaySamples,
    }
    let mut rays = Vec::with_capacity(chunk.len());
    let mut out: Vec<PixelOut> = chunk
        .iter()
        .enumerate()
        .map(|(slot, &idx)| {
            let (u, v) = (idx % camera.width, idx / camera.width);
            let (origin, dir) = camera.pixel_ray(u, v);
            if let Some((t0, t1)) = bounds.ray_range(origin, dir) {
                let near = t0.max(cfg.near_min);
                if t1 > near {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(idx as u64);
                    let z = stratified_depths(near, t1, cfg.coarse_samples, &mut rng);
                    let samples = RaySamples::from_depths(origin, dir, z, t1);
                    rays.push(Ray {
                        slot,
                        origin,
                        dir,
                        far: t1,
                        samples,
                    });
                }
            }
            PixelOut {
                rgb: BACKGROUND_RGB,
                depth: diagonal,
                normal: -dir,
                opacity: 0.0,
            }
        })
        .collect();

    if rays.is_empty() {
        return out;
    }

    // Coarse pass: densities only.
    let coarse_sigma = batched_sigma(params, dparams, srdf_mode, rays.iter().map(|r| &r.samples));

    // Importance refinement per ray.
    let mut offset = 0;
    for ray in &mut rays {
        let n = ray.samples.len();
        let sigma = &coarse_sigma[offset..offset + n];
        offset += n;
        let weights = quadrature(sigma, &ray.samples.delta).weights;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chunk[ray.slot] as u64 ^ 0x9e37_79b9_7f4a_7c15);
        let fine = importance_depths(&ray.samples.z, ray.far, &weights, cfg.fine_samples, &mut rng);
        let merged = merge_depths(ray.samples.z.clone(), fine);
        ray.samples = RaySamples::from_depths(ray.origin, ray.dir, merged, ray.far);
    }

    // Fine pass: full shading.
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for ray in &rays {
        points.extend(ray.samples.points());
        dirs.extend(std::iter::repeat(ray.dir).take(ray.samples.len()));
    }
    let (d_geo, feat, grads) = params.eval_geometry_with_gradient(&points, cfg.grad_step);
    let normals: Vec<Vec3> = grads
        .iter()
        .zip(&dirs)
        .map(|(grad, dir)| {
            if grad.norm() > 1e-12 {
                grad.normalized()
            } else {
                -*dir
            }
        })
        .collect();
    let sigma_src: Vec<f64> = if srdf_mode {
        let (d_ray, _) = params.eval_srdf(&points, &dirs, &feat);
        d_ray
    } else {
        d_geo
    };
    let sigma: Vec<f64> = sigma_src
        .iter()
        .map(|&d| {
            if srdf_mode {
                density_from_srdf(d, dparams)
            } else {
                density_from_sdf(d, dparams)
            }
        })
        .collect();
    let colors = params.eval_color(&points, &dirs, &normals, &feat);

    let mut offset = 0;
    for ray in &rays {
        let n = ray.samples.len();
        let quad = quadrature(&sigma[offset..offset + n], &ray.samples.delta);
        let rgb = render_color(&quad.weights, &colors[offset..offset + n]);
        let depth = render_depth(&quad.weights, &ray.samples.z);
        let (raw_n, _) = render_normal(&quad.weights, &normals[offset..offset + n]);
        offset += n;

        let rest = 1.0 - quad.opacity;
        let blended_n = raw_n + rest * -ray.dir;
        out[ray.slot] = PixelOut {
            rgb: composite_over_background(rgb, quad.opacity, BACKGROUND_RGB),
            depth: depth + rest * ray.far,
            normal: if blended_n.norm() > 1e-12 {
                blended_n.normalized()
            } else {
                -ray.dir
            },
            opacity: quad.opacity,
        };
    }
    out
}

/// Evaluate the requested density's distance inputs for several rays in
/// one field batch; returns per-sample sigma in ray order.
fn batched_sigma<'a>(
    params: &FieldParams,
    dparams: &super::DensityParams,
    srdf_mode: bool,
    rays: impl Iterator<Item = &'a RaySamples>,
) -> Vec<f64> {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for s in rays {
        points.extend(s.points());
        dirs.extend(std::iter::repeat(s.dir).take(s.len()));
    }
    if srdf_mode {
        let (_, feat) = params.eval_geometry(&points);
        let (d_ray, _) = params.eval_srdf(&points, &dirs, &feat);
        d_ray
            .iter()
            .map(|&d| density_from_srdf(d, dparams))
            .collect()
    } else {
        params
            .eval_sdf(&points)
            .iter()
            .map(|&d| density_from_sdf(d, dparams))
            .collect()
    }
}

// ---- netpbm i/o ----

fn gamma_encode(v: f64, gamma: f64) -> u8 {
    let clamped = v.clamp(0.0, 1.0);
    let coded = if gamma == 1.0 {
        clamped
    } else {
        clamped.powf(1.0 / gamma)
    };
    (coded * 255.0).round() as u8
}

/// Binary PPM (P6, 8-bit) with the given display gamma applied at write
/// time.
pub fn write_ppm(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[[f64; 3]],
    gamma: f64,
) -> Result<(), RenderError> {
    if pixels.len() != width * height {
        return Err(RenderError::Format(format!(
            "pixel count {} does not match {width}x{height}",
            pixels.len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{width} {height}\n255\n")?;
    let mut body = Vec::with_capacity(pixels.len() * 3);
    for px in pixels {
        for &c in px {
            body.push(gamma_encode(c, gamma));
        }
    }
    f.write_all(&body)?;
    f.flush()?;
    Ok(())
}

/// Lossless 16-bit PGM (P5, big-endian) for depth; values are divided by
/// `scale` before quantization and the scale is recorded in a header
/// comment so readers can undo it.
pub fn write_pgm16(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f64],
    scale: f64,
) -> Result<(), RenderError> {
    if values.len() != width * height {
        return Err(RenderError::Format(format!(
            "value count {} does not match {width}x{height}",
            values.len()
        )));
    }
    if !(scale > 0.0) {
        return Err(RenderError::Format(format!("bad depth scale {scale}")));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n# scale {scale}\n{width} {height}\n65535\n")?;
    let mut body = Vec::with_capacity(values.len() * 2);
    for &v in values {
        let q = ((v / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
        body.extend_from_slice(&q.to_be_bytes());
    }
    f.write_all(&body)?;
    f.flush()?;
    Ok(())
}

/// Header scan shared by the readers: checks the magic, returns the
/// numeric header fields, any comment lines, and the offset of the binary
/// body (one whitespace byte after the last header token).
fn parse_netpbm_header(
    bytes: &[u8],
    magic: &str,
    fields: usize,
) -> Result<(Vec<usize>, Vec<String>, usize), RenderError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(RenderError::Format(format!("expected {magic} header")));
    }
    let mut nums = Vec::with_capacity(fields);
    let mut comments = Vec::new();
    let mut i = 2;
    while nums.len() < fields {
        if i >= bytes.len() {
            return Err(RenderError::Format("truncated header".into()));
        }
        match bytes[i] {
            b'#' => {
                let start = i + 1;
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                comments.push(String::from_utf8_lossy(&bytes[start..i]).trim().to_string());
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let token = std::str::from_utf8(&bytes[start..i])
                    .map_err(|_| RenderError::Format("non-ascii header".into()))?;
                let v = token
                    .parse::<usize>()
                    .map_err(|_| RenderError::Format(format!("bad header token '{token}'")))?;
                nums.push(v);
            }
        }
    }
    // Exactly one whitespace byte separates the header from the body.
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(RenderError::Format("missing header terminator".into()));
    }
    Ok((nums, comments, i + 1))
}

/// Read a P6 PPM back into linear-light values (decoding the gamma the
/// file was written with).
pub fn read_ppm(path: &Path, gamma: f64) -> Result<(usize, usize, Vec<[f64; 3]>), RenderError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (nums, _, body) = parse_netpbm_header(&bytes, "P6", 3)?;
    let (width, height, maxval) = (nums[0], nums[1], nums[2]);
    if maxval != 255 {
        return Err(RenderError::Format(format!("unsupported maxval {maxval}")));
    }
    let need = width * height * 3;
    let data = &bytes[body..];
    if data.len() < need {
        return Err(RenderError::Format("truncated pixel data".into()));
    }
    let decode = |b: u8| {
        let v = b as f64 / 255.0;
        if gamma == 1.0 {
            v
        } else {
            v.powf(gamma)
        }
    };
    let pixels = data[..need]
        .chunks_exact(3)
        .map(|c| [decode(c[0]), decode(c[1]), decode(c[2])])
        .collect();
    Ok((width, height, pixels))
}

/// Read a 16-bit P5 PGM written by `write_pgm16`: returns (width, height,
/// scale, values).
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, f64, Vec<f64>), RenderError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (nums, comments, body) = parse_netpbm_header(&bytes, "P5", 3)?;
    let (width, height, maxval) = (nums[0], nums[1], nums[2]);
    if maxval != 65535 {
        return Err(RenderError::Format(format!("unsupported maxval {maxval}")));
    }
    let scale = comments
        .iter()
        .find_map(|c| c.strip_prefix("scale "))
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| RenderError::Format("missing scale comment".into()))?;
    let need = width * height * 2;
    let data = &bytes[body..];
    if data.len() < need {
        return Err(RenderError::Format("truncated depth data".into()));
    }
    let values = data[..need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * scale)
        .collect();
    Ok((width, height, scale, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{vec3, Aabb};
    use crate::render::BETA_INIT;

    fn small_camera(n: usize) -> Camera {
        Camera::look_at(
            vec3(0.0, 0.0, -2.5),
            Vec3::ZERO,
            Vec3::Y,
            std::f64::consts::FRAC_PI_3,
            n,
            n,
        )
        .unwrap()
    }

    #[test]
    fn oracle_mode_reproduces_oracle_pixels() {
        let scene = Scene::room();
        let camera = small_camera(4);
        let bundle = render_image(&RenderMode::Oracle { scene: &scene }, &camera, &RenderConfig::default());
        for v in 0..4 {
            for u in 0..4 {
                let (rgb, depth, normal) = scene.oracle_pixel(&camera, u, v);
                let i = v * 4 + u;
                assert_eq!(bundle.rgb[i], rgb);
                assert_eq!(bundle.depth[i], depth);
                assert_eq!(bundle.normal[i], normal);
            }
        }
    }

    #[test]
    fn vacuum_field_renders_pure_background() {
        // Zero parameters with a large positive distance bias: the field
        // reports empty space everywhere.
        let mut params = FieldParams::empty(Aabb::new(Vec3::splat(-1.3), Vec3::splat(1.3)));
        params.geo_sdf.b.set(0, 0, 100.0);
        let density = DensityPair::default();
        let camera = small_camera(3);
        let cfg = RenderConfig {
            coarse_samples: 8,
            fine_samples: 4,
            ..RenderConfig::default()
        };
        let bundle = render_image(
            &RenderMode::SdfDensity {
                params: &params,
                density: &density,
            },
            &camera,
            &cfg,
        );
        for (rgb, opacity) in bundle.rgb.iter().zip(&bundle.opacity) {
            assert!(*opacity < 1e-200);
            for k in 0..3 {
                assert!((rgb[k] - BACKGROUND_RGB[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_init_field_is_opaque_in_the_middle() {
        let bounds = Aabb::new(Vec3::splat(-2.0), Vec3::splat(2.0));
        let params = FieldParams::init_geometric(bounds, 1.0, 0);
        let density = DensityPair::new(BETA_INIT, false);
        let camera = small_camera(3);
        let cfg = RenderConfig {
            coarse_samples: 24,
            fine_samples: 8,
            ..RenderConfig::default()
        };
        let bundle = render_image(
            &RenderMode::SdfDensity {
                params: &params,
                density: &density,
            },
            &camera,
            &cfg,
        );
        // Center ray pierces the unit sphere head-on.
        let center = 1 * 3 + 1;
        assert!(
            bundle.opacity[center] > 0.9,
            "center opacity {}",
            bundle.opacity[center]
        );
        for &op in &bundle.opacity {
            assert!((0.0..=1.0 + 1e-9).contains(&op));
        }
        // Depth at the center should sit near the front intersection of
        // the sphere (eye at 2.5 -> surface at ~1.5).
        assert!(
            (bundle.depth[center] - 1.5).abs() < 0.5,
            "center depth {}",
            bundle.depth[center]
        );
    }

    #[test]
    fn rendering_is_deterministic_across_chunk_sizes() {
        let bounds = Aabb::new(Vec3::splat(-2.0), Vec3::splat(2.0));
        let params = FieldParams::init_geometric(bounds, 1.0, 4);
        let density = DensityPair::default();
        let camera = small_camera(3);
        let base = RenderConfig {
            coarse_samples: 12,
            fine_samples: 4,
            chunk_pixels: 64,
            ..RenderConfig::default()
        };
        let alt = RenderConfig {
            chunk_pixels: 2,
            ..base.clone()
        };
        let mode = RenderMode::SrdfDensity {
            params: &params,
            density: &density,
        };
        let a = render_image(&mode, &camera, &base);
        let b = render_image(&mode, &camera, &alt);
        for i in 0..a.rgb.len() {
            for k in 0..3 {
                assert_eq!(a.rgb[i][k].to_bits(), b.rgb[i][k].to_bits());
            }
            assert_eq!(a.depth[i].to_bits(), b.depth[i].to_bits());
        }
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let pixels = vec![
            [0.0, 0.5, 1.0],
            [0.25, 0.75, 0.1],
            [1.0, 0.0, 0.0],
            [0.08, 0.08, 0.10],
        ];
        write_ppm(&path, 2, 2, &pixels, 2.2).unwrap();
        let (w, h, back) = read_ppm(&path, 2.2).unwrap();
        assert_eq!((w, h), (2, 2));
        for (orig, read) in pixels.iter().zip(&back) {
            for k in 0..3 {
                // Quantization in gamma space: generous linear tolerance.
                assert!((orig[k] - read[k]).abs() < 0.02, "{orig:?} vs {read:?}");
            }
        }
    }

    #[test]
    fn pgm16_round_trip_and_endianness() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        let values = vec![0.0, 1.25, 2.5, 5.0];
        write_pgm16(&path, 2, 2, &values, 5.0).unwrap();
        let (w, h, scale, back) = read_pgm16(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(scale, 5.0);
        for (orig, read) in values.iter().zip(&back) {
            assert!((orig - read).abs() < 5.0 / 65535.0 + 1e-12);
        }
        // The maximum value must be the big-endian all-ones pattern.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0xFF, 0xFF]);
    }

    #[test]
    fn readers_reject_mangled_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("bad.ppm");
        std::fs::write(&bad_magic, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(matches!(
            read_ppm(&bad_magic, 2.2),
            Err(RenderError::Format(_))
        ));

        let truncated = dir.path().join("cut.pgm");
        std::fs::write(&truncated, b"P5\n# scale 1\n2 2\n65535\n\x00\x01").unwrap();
        assert!(matches!(read_pgm16(&truncated), Err(RenderError::Format(_))));

        let no_scale = dir.path().join("noscale.pgm");
        std::fs::write(no_scale.as_path(), b"P5\n1 1\n65535\n\x00\x01").unwrap();
        assert!(matches!(read_pgm16(&no_scale), Err(RenderError::Format(_))));
    }
}
