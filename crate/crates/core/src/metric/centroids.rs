use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::backbone::EmbeddingBackbone;
use crate::data::TaskSpec;
use crate::error::{Error, Result};

/// Mean embedding of one class, frozen at the task where its data was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub mean: Vec<f32>,
    pub count: u64,
    pub task_index: usize,
}

/// Append-only map from class id to its centroid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CentroidStore {
    dim: Option<usize>,
    entries: BTreeMap<u32, Centroid>,
}

const MAGIC: &[u8; 8] = b"RKDCENT\0";
const VERSION: u32 = 1;

impl CentroidStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, class_id: u32) -> Option<&Centroid> {
        self.entries.get(&class_id)
    }

    /// Class ids in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Centroid)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Adds a centroid; an existing class is never overwritten.
    pub fn insert(&mut self, class_id: u32, centroid: Centroid) -> Result<()> {
        if self.entries.contains_key(&class_id) {
            return Err(Error::CentroidExists(class_id));
        }
        match self.dim {
            Some(d) if d != centroid.mean.len() => {
                return Err(Error::Shape(format!(
                    "centroid of dimension {} in a store of dimension {d}",
                    centroid.mean.len()
                )))
            }
            None => self.dim = Some(centroid.mean.len()),
            _ => {}
        }
        self.entries.insert(class_id, centroid);
        Ok(())
    }

    /// Inserts all centroids of one task, or none if any class is present.
    pub fn extend(&mut self, centroids: BTreeMap<u32, Centroid>) -> Result<()> {
        if let Some(c) = centroids.keys().find(|c| self.entries.contains_key(c)) {
            return Err(Error::CentroidExists(*c));
        }
        for (c, v) in centroids {
            self.insert(c, v)?;
        }
        Ok(())
    }

    /// Little-endian layout:
    /// `magic[8] | version u32 | dim u32 | count u32` followed by `count`
    /// records `class_id u32 | task_index u32 | samples u64 | dim × f32`,
    /// sorted by class id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim.unwrap_or(0);
        let mut out = Vec::with_capacity(20 + self.len() * (16 + 4 * dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (class_id, c) in &self.entries {
            out.extend_from_slice(&class_id.to_le_bytes());
            out.extend_from_slice(&(c.task_index as u32).to_le_bytes());
            out.extend_from_slice(&c.count.to_le_bytes());
            for v in &c.mean {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cur.len() < n {
                return Err("truncated centroid file".into());
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = u32_at(take(4)?) as usize;
        let count = u32_at(take(4)?) as usize;
        let mut store = CentroidStore::new();
        for _ in 0..count {
            let class_id = u32_at(take(4)?);
            let task_index = u32_at(take(4)?) as usize;
            let samples = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let mean = take(4 * dim)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            store
                .insert(
                    class_id,
                    Centroid {
                        mean,
                        count: samples,
                        task_index,
                    },
                )
                .map_err(|e| e.to_string())?;
        }
        if !cur.is_empty() {
            return Err("trailing bytes".into());
        }
        if count == 0 && dim > 0 {
            store.dim = Some(dim);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Per-class means of the rows of `z`, accumulated in f64. Every class in
/// `classes` must have at least one row.
pub fn class_means(
    z: ArrayView2<f32>,
    labels: &[u32],
    classes: &[u32],
    task_index: usize,
) -> Result<BTreeMap<u32, Centroid>> {
    if z.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", z.nrows(), labels.len())));
    }
    let d = z.ncols();
    let mut sums: BTreeMap<u32, (Vec<f64>, u64)> =
        classes.iter().map(|&c| (c, (vec![0.0; d], 0))).collect();
    for (row, label) in z.rows().into_iter().zip(labels) {
        if let Some((sum, n)) = sums.get_mut(label) {
            for (s, v) in sum.iter_mut().zip(row.iter()) {
                *s += *v as f64;
            }
            *n += 1;
        }
    }
    sums.into_iter()
        .map(|(c, (sum, n))| {
            if n == 0 {
                return Err(Error::Degenerate(format!("class {c} has no samples")));
            }
            Ok((
                c,
                Centroid {
                    mean: sum.iter().map(|s| (s / n as f64) as f32).collect(),
                    count: n,
                    task_index,
                },
            ))
        })
        .collect()
}

/// Class centroids of `task`'s training split under `model`.
pub fn compute_centroids(
    model: &EmbeddingBackbone,
    task: &TaskSpec,
    chunk: usize,
) -> Result<BTreeMap<u32, Centroid>> {
    let (z, labels) = model.embed_view(&task.train, chunk)?;
    class_means(z.view(), &labels, &task.class_ids, task.task_index)
}
