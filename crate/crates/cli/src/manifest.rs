//! Run manifests and output files.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use wnn_core::dataset::LabeledDataset;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetRecord {
    pub name: String,
    pub images: usize,
    pub class_sizes: [usize; wnn_core::NUM_CLASSES],
    pub sha256: String,
}

impl DatasetRecord {
    pub fn of(ds: &LabeledDataset) -> Self {
        DatasetRecord {
            name: ds.name.clone(),
            images: ds.len(),
            class_sizes: ds.class_sizes(),
            sha256: ds.content_hash(),
        }
    }
}

/// Echo of the configuration, input hashes, outputs and timing of one run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    pub workers: usize,
    pub datasets: Vec<DatasetRecord>,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

/// Collects a run's outputs and writes them, plus its manifest, from the
/// calling thread only.
pub struct RunRecorder {
    dir: PathBuf,
    command: String,
    config: ExperimentConfig,
    datasets: Vec<DatasetRecord>,
    outputs: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl RunRecorder {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.output_dir).with_context(|| {
            format!("creating output directory {}", config.output_dir.display())
        })?;
        Ok(RunRecorder {
            dir: config.output_dir.clone(),
            command: command.to_string(),
            config: config.clone(),
            datasets: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn dataset(&mut self, record: DatasetRecord) {
        self.datasets.push(record);
    }

    pub fn datasets(&self) -> &[DatasetRecord] {
        &self.datasets
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `contents` to `name` in the output directory (via a temporary
    /// file and a rename, so readers never see a half-written file).
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, contents)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(self, manifest_name: &str, results: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            workers: rayon::current_num_threads(),
            datasets: self.datasets,
            outputs: self.outputs,
            results,
            started_unix_seconds: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(manifest_name);
        write_atomic(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(path)
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}
