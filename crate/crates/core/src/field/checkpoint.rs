//! Checkpoint I/O. The binary container stores a versioned header, the
//! training step, and a list of named row-major f64 tensors; a JSON sidecar
//! next to it records the architecture so a loader can validate shapes
//! before touching the payload. Extra entries (density parameters,
//! optimizer moments) ride along untouched.

use super::{FieldParams, FourierEncoding, HIDDEN};
use crate::ad::Tensor;
use crate::geom::Aabb;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRDFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("sidecar json: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("tensor '{name}': expected {expected_rows}x{expected_cols}, file has {got_rows}x{got_cols}")]
    ShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("tensor '{0}' missing from checkpoint")]
    MissingTensor(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

/// Architecture metadata stored in the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchMeta {
    pub encoding: FourierEncoding,
    pub bounds: Aabb,
    pub hidden: usize,
    pub trunk_layers: usize,
}

/// Sidecar path: same file name with a `.json` extension appended to the
/// stem (ckpt_000100.bin -> ckpt_000100.json).
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Format("truncated checkpoint".into()))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

/// Write the binary container.
pub fn save_tensors(
    path: &Path,
    step: u64,
    entries: &[(String, &Tensor)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    w.write_all(&step.to_le_bytes())?;
    write_u32(&mut w, entries.len() as u32)?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(CheckpointError::Format(format!("tensor name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        write_u32(&mut w, t.rows() as u32)?;
        write_u32(&mut w, t.cols() as u32)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read the binary container back: (step, named tensors in file order).
pub fn load_tensors(path: &Path) -> Result<(u64, Vec<(String, Tensor)>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<8>(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let step = u64::from_le_bytes(read_exact::<8>(&mut r)?);
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| CheckpointError::Format("truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Format("tensor name is not utf-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        for v in &mut data {
            *v = f64::from_le_bytes(read_exact::<8>(&mut r)?);
        }
        let t = Tensor::from_vec(rows, cols, data)
            .map_err(|e| CheckpointError::Format(format!("tensor '{name}': {e}")))?;
        entries.push((name, t));
    }
    Ok((step, entries))
}

impl FieldParams {
    pub fn arch_meta(&self) -> ArchMeta {
        ArchMeta {
            encoding: self.encoding,
            bounds: self.bounds,
            hidden: HIDDEN,
            trunk_layers: self.geo_layers.len(),
        }
    }

    /// Field tensors paired with their canonical names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.tensor_names().into_iter().zip(self.tensors()).collect()
    }

    /// Save field parameters (plus any extra named tensors) and the JSON
    /// sidecar describing the architecture.
    pub fn save_checkpoint(
        &self,
        path: &Path,
        step: u64,
        extras: &[(String, &Tensor)],
    ) -> Result<(), CheckpointError> {
        let mut entries = self.named_tensors();
        entries.extend(extras.iter().map(|(n, t)| (n.clone(), *t)));
        save_tensors(path, step, &entries)?;
        let sidecar = serde_json::to_string_pretty(&self.arch_meta())?;
        std::fs::write(sidecar_path(path), sidecar + "\n")?;
        Ok(())
    }

    /// Load a checkpoint written by `save_checkpoint`. Returns the rebuilt
    /// parameters, the step, and every entry that is not a field tensor
    /// (density parameters, optimizer state) for the caller to consume.
    pub fn load_checkpoint(
        path: &Path,
    ) -> Result<(FieldParams, u64, Vec<(String, Tensor)>), CheckpointError> {
        let sidecar = std::fs::read_to_string(sidecar_path(path))?;
        let meta: ArchMeta = serde_json::from_str(&sidecar)?;
        if meta.hidden != HIDDEN {
            return Err(CheckpointError::Architecture(format!(
                "hidden width {} (this build supports {HIDDEN})",
                meta.hidden
            )));
        }
        if meta.trunk_layers != 7 {
            return Err(CheckpointError::Architecture(format!(
                "trunk depth {} (this build supports 7)",
                meta.trunk_layers
            )));
        }
        if meta.encoding != FourierEncoding::new(super::FOURIER_LEVELS) {
            return Err(CheckpointError::Architecture(format!(
                "encoding {:?} (this build supports L={} with raw input)",
                meta.encoding,
                super::FOURIER_LEVELS
            )));
        }
        let mut params = FieldParams::empty(meta.bounds);
        let (step, entries) = load_tensors(path)?;
        let mut by_name: HashMap<String, Tensor> = entries.into_iter().collect();
        for (name, slot) in params.tensor_names().into_iter().zip(params.tensors_mut()) {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected_rows: slot.rows(),
                    expected_cols: slot.cols(),
                    got_rows: t.rows(),
                    got_cols: t.cols(),
                });
            }
            *slot = t;
        }
        let mut extras: Vec<(String, Tensor)> = by_name.into_iter().collect();
        extras.sort_by(|a, b| a.0.cmp(&b.0));
        Ok((params, step, extras))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    fn bounds() -> Aabb {
        Aabb::new(Vec3::splat(-2.0), Vec3::splat(2.0))
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_000123.bin");
        let params = FieldParams::init_geometric(bounds(), 1.0, 5);
        let beta = Tensor::filled(1, 1, -2.25);
        let moment = Tensor::filled(3, 4, 0.5);
        let extras = vec![
            ("density.sdf.beta_raw".to_string(), &beta),
            ("adam.m.geo.0.w".to_string(), &moment),
        ];
        params.save_checkpoint(&path, 123, &extras).unwrap();

        let (loaded, step, back) = FieldParams::load_checkpoint(&path).unwrap();
        assert_eq!(step, 123);
        for (a, b) in params.tensors().iter().zip(loaded.tensors()) {
            assert_eq!(a.data(), b.data());
            assert_eq!(a.shape(), b.shape());
        }
        assert_eq!(loaded.bounds, bounds());
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "adam.m.geo.0.w");
        assert_eq!(back[1].0, "density.sdf.beta_raw");
        assert_eq!(back[1].1.get(0, 0), -2.25);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"NOTACKPT________").unwrap();
        match load_tensors(&path) {
            Err(CheckpointError::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.bin");
        let t = Tensor::filled(8, 8, 1.0);
        save_tensors(&path, 0, &[("x".to_string(), &t)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_tensors(&path), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let params = FieldParams::init_geometric(bounds(), 1.0, 1);
        // Replace one field tensor with the wrong shape in the container.
        let mut entries = params.named_tensors();
        let wrong = Tensor::zeros(2, 2);
        entries[0].1 = &wrong;
        save_tensors(&path, 7, &entries).unwrap();
        let sidecar = serde_json::to_string(&params.arch_meta()).unwrap();
        std::fs::write(sidecar_path(&path), sidecar).unwrap();
        match FieldParams::load_checkpoint(&path) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "geo.0.w"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let params = FieldParams::init_geometric(bounds(), 1.0, 1);
        let mut entries = params.named_tensors();
        entries.pop();
        save_tensors(&path, 7, &entries).unwrap();
        let sidecar = serde_json::to_string(&params.arch_meta()).unwrap();
        std::fs::write(sidecar_path(&path), sidecar).unwrap();
        assert!(matches!(
            FieldParams::load_checkpoint(&path),
            Err(CheckpointError::MissingTensor(_))
        ));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let params = FieldParams::init_geometric(bounds(), 1.0, 1);
        params.save_checkpoint(&path, 0, &[]).unwrap();
        let mut meta = params.arch_meta();
        meta.hidden = 128;
        std::fs::write(sidecar_path(&path), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(
            FieldParams::load_checkpoint(&path),
            Err(CheckpointError::Architecture(_))
        ));
    }
}
