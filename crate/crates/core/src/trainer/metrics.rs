use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss components of one student update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_tri: f64,
    pub l_fam: f64,
    pub l_cov: f64,
    pub d_e: f64,
    pub total: f64,
    pub triplets: usize,
}

/// One line of `metrics.log`. Records carry no wall-clock data so that
/// seeded runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MetricRecord {
    TaskStart {
        task: usize,
        classes: Vec<u32>,
        real_batch: usize,
        synthetic_batch: usize,
        /// `synthetic:real`, reduced.
        ratio: String,
        teacher_checksum: Option<String>,
    },
    Generator {
        task: usize,
        epoch: usize,
        step: usize,
        l_g: f64,
    },
    Student {
        task: usize,
        epoch: usize,
        step: usize,
        global_step: u64,
        n_real: usize,
        n_synthetic: usize,
        #[serde(flatten)]
        losses: StepLosses,
    },
    EpochEnd {
        task: usize,
        epoch: usize,
        teacher_checksum: Option<String>,
    },
    TaskEnd {
        task: usize,
        accuracies: Vec<f64>,
        separability: Option<f64>,
        student_checksum: String,
        past_train_reads: usize,
    },
}

/// `a:b` reduced by the greatest common divisor.
pub fn ratio_string(a: usize, b: usize) -> String {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    let g = gcd(a, b).max(1);
    format!("{}:{}", a / g, b / g)
}

/// Append-only JSON-lines log.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    file: File,
    lines: u64,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            lines: 0,
        })
    }

    /// Reopens an existing log keeping its first `lines` records; later
    /// lines, written after the checkpoint being resumed, are dropped.
    pub fn resume(path: &Path, lines: u64) -> Result<Self> {
        let kept = read_lines(path)?;
        if (kept.len() as u64) < lines {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("log has {} lines, checkpoint expects {lines}", kept.len()),
            });
        }
        let mut text = String::new();
        for l in kept.iter().take(lines as usize) {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            lines,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn append(&mut self, record: &MetricRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.lines += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Parses a metrics log back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    read_lines(path)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
