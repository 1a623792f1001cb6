//! Run provenance. Every artifact-producing command drops a manifest into
//! its output directory before doing any work and rewrites it on success, so
//! a manifest that still says "running" marks a crashed or interrupted run,
//! and a complete one records exactly what was produced and from what inputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name.
    pub command: String,
    /// Full invocation, for copy-paste reruns.
    pub argv: Vec<String>,
    pub version: String,
    /// Resolved seed (flag, then SRDFLAB_SEED); None means command defaults.
    pub seed: Option<u64>,
    /// Complete snapshot of the effective configuration.
    pub config: serde_json::Value,
    pub status: String,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: Option<f64>,
}

pub struct ManifestGuard {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

/// Create the run directory and write the initial "running" manifest.
pub fn start(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: serde_json::Value,
) -> Result<ManifestGuard> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let guard = ManifestGuard {
        dir: dir.to_path_buf(),
        manifest: RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            status: "running".into(),
            outputs: Vec::new(),
            wall_clock_seconds: None,
        },
        started: Instant::now(),
    };
    guard.write()?;
    Ok(guard)
}

impl ManifestGuard {
    pub fn path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn add_output(&mut self, path: &Path) {
        let shown = path.strip_prefix(&self.dir).unwrap_or(path);
        self.manifest.outputs.push(shown.display().to_string());
    }

    /// Record every file under the run directory (sorted, manifest itself
    /// excluded) — for commands whose artifacts are written by library code.
    pub fn add_tree(&mut self) -> Result<()> {
        let mut stack = vec![self.dir.clone()];
        let mut files = Vec::new();
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p != self.path() {
                    files.push(p);
                }
            }
        }
        files.sort();
        for f in files {
            self.add_output(&f);
        }
        Ok(())
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.path(), text + "\n")
            .with_context(|| format!("writing {}", self.path().display()))
    }

    pub fn finalize(mut self) -> Result<()> {
        self.manifest.status = "complete".into();
        self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        self.write()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_goes_running_then_complete() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let guard = start(&run, "demo", Some(7), serde_json::json!({"n": 3})).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(guard.path()).unwrap()).unwrap();
        assert_eq!(first["status"], "running");
        assert_eq!(first["seed"], 7);

        std::fs::write(run.join("a.csv"), "x\n").unwrap();
        std::fs::create_dir(run.join("sub")).unwrap();
        std::fs::write(run.join("sub/b.obj"), "o\n").unwrap();
        let mut guard = guard;
        guard.add_tree().unwrap();
        let path = guard.path();
        guard.finalize().unwrap();

        let done: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(done["status"], "complete");
        assert!(done["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
        let outputs: Vec<String> = done["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        assert_eq!(outputs, vec!["a.csv".to_string(), "sub/b.obj".to_string()]);
    }
}
