use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

/// Provenance record written next to the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_sha256: String,
    pub library_version: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<OutputFile>,
    pub timings: Vec<Timing>,
}

/// Collects output files and phase timings while a command runs.
pub struct Recorder {
    dir: PathBuf,
    files: Vec<PathBuf>,
    timings: Vec<Timing>,
    started: Instant,
}

impl Recorder {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Recorder {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to `name` inside the output directory and registers it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.register(path.clone());
        Ok(path)
    }

    /// Registers a file some other routine already wrote.
    pub fn register(&mut self, path: PathBuf) {
        if !self.files.contains(&path) {
            self.files.push(path);
        }
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t = Instant::now();
        let out = f(self);
        self.timings.push(Timing {
            phase: phase.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish(mut self, experiment: &str, config_sha256: String, seed: u64) -> Result<RunManifest, CliError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for path in &self.files {
            let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
            let file = path.strip_prefix(&self.dir).unwrap_or(path).display().to_string();
            outputs.push(OutputFile {
                file,
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        self.timings.push(Timing {
            phase: "total".into(),
            seconds: self.started.elapsed().as_secs_f64(),
        });
        let manifest = RunManifest {
            experiment: experiment.to_string(),
            config_sha256,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads: rayon::current_num_threads(),
            outputs,
            timings: std::mem::take(&mut self.timings),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
