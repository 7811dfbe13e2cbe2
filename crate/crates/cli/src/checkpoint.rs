//! Per-batch checkpoints of test-image results, so interrupted runs resume.
//!
//! The file is JSON lines: a header naming the run, then one line per
//! classified test image. A torn final line is dropped on resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wnn_core::dwnn::HybridOutcome;
use wnn_core::image::{Image, NUM_CLASSES};
use wnn_core::wnn::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridRow {
    pub wnn: usize,
    pub dwnn: usize,
    pub fallback: Option<usize>,
}

/// One classified test image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub index: usize,
    pub truth: u8,
    pub predicted: u8,
    pub dist_sq: [u64; NUM_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridRow>,
}

impl Row {
    pub fn from_prediction(p: &Prediction) -> Self {
        Row {
            index: p.index,
            truth: p.truth,
            predicted: p.predicted,
            dist_sq: p.dist_sq,
            hybrid: None,
        }
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            index: self.index,
            truth: self.truth,
            predicted: self.predicted,
            dist_sq: self.dist_sq,
        }
    }

    pub fn outcome(&self) -> Option<HybridOutcome> {
        self.hybrid.map(|h| HybridOutcome {
            digit: self.predicted as usize,
            wnn: h.wnn,
            dwnn: h.dwnn,
            fallback: h.fallback,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    run: serde_json::Value,
}

pub struct Checkpoint {
    path: PathBuf,
    file: File,
}

impl Checkpoint {
    /// Opens (or starts) the checkpoint for `run`, returning the rows
    /// already completed. A checkpoint written for a different run is an
    /// error rather than being silently reused.
    pub fn open(path: &Path, run: &serde_json::Value) -> Result<(Self, Vec<Row>)> {
        let mut rows = Vec::new();
        if path.exists() {
            let reader = BufReader::new(
                File::open(path).with_context(|| format!("opening {}", path.display()))?,
            );
            let mut lines = reader.lines();
            let header: Header = match lines.next() {
                Some(line) => serde_json::from_str(&line?)
                    .with_context(|| format!("checkpoint header in {}", path.display()))?,
                None => Header { run: run.clone() },
            };
            if &header.run != run {
                bail!(
                    "checkpoint {} belongs to a different run configuration; delete it to start over",
                    path.display()
                );
            }
            for line in lines {
                match serde_json::from_str::<Row>(&line?) {
                    Ok(r) if r.index == rows.len() => rows.push(r),
                    _ => break,
                }
            }
        }
        // rewrite so that a torn tail never precedes new rows
        let mut file =
            File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(
            file,
            "{}",
            serde_json::to_string(&Header { run: run.clone() })?
        )?;
        for r in &rows {
            writeln!(file, "{}", serde_json::to_string(r)?)?;
        }
        file.sync_data()?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((
            Checkpoint {
                path: path.to_path_buf(),
                file,
            },
            rows,
        ))
    }

    pub fn append(&mut self, rows: &[Row]) -> Result<()> {
        let mut buf = String::new();
        for r in rows {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Removes the checkpoint once the final outputs are written.
    pub fn finish(self) -> Result<()> {
        drop(self.file);
        std::fs::remove_file(&self.path)
            .with_context(|| format!("removing {}", self.path.display()))
    }
}

/// How far a batched run got.
pub enum Progress {
    Complete(Vec<Row>),
    Stopped { done: usize, total: usize },
}

/// Classifies `tests` in batches, resuming from and appending to the
/// checkpoint. `max_batches` stops early (leaving the checkpoint in place).
pub fn run_batched(
    tests: &[&Image],
    truths: &[u8],
    batch_size: usize,
    checkpoint_path: &Path,
    run: &serde_json::Value,
    max_batches: Option<usize>,
    mut classify: impl FnMut(&[&Image], &[u8], usize) -> Result<Vec<Row>>,
) -> Result<(Progress, Checkpoint)> {
    let (mut ckpt, mut rows) = Checkpoint::open(checkpoint_path, run)?;
    if rows.len() > tests.len() {
        bail!(
            "checkpoint {} holds more rows than there are test images",
            checkpoint_path.display()
        );
    }
    if !rows.is_empty() {
        eprintln!(
            "resuming after {} of {} test images",
            rows.len(),
            tests.len()
        );
    }
    let started = Instant::now();
    let mut batches = 0;
    while rows.len() < tests.len() {
        if max_batches.is_some_and(|m| batches >= m) {
            return Ok((
                Progress::Stopped {
                    done: rows.len(),
                    total: tests.len(),
                },
                ckpt,
            ));
        }
        let start = rows.len();
        let end = (start + batch_size).min(tests.len());
        let new = classify(&tests[start..end], &truths[start..end], start)?;
        ckpt.append(&new)?;
        rows.extend(new);
        batches += 1;
        eprintln!(
            "  {}/{} test images classified ({:.1}s)",
            rows.len(),
            tests.len(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok((Progress::Complete(rows), ckpt))
}
