use std::collections::BTreeMap;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stream::SampleView;
use crate::error::{Error, Result};

/// Images `(batch, c, h, w)` with their global class labels.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub images: Tensor,
    pub labels: Vec<u32>,
}

impl LabeledBatch {
    pub fn new(images: Tensor, labels: Vec<u32>) -> Result<Self> {
        let b = images.dims().first().copied().unwrap_or(0);
        if images.rank() != 4 || b != labels.len() {
            return Err(Error::Shape(format!(
                "batch images {:?} vs {} labels",
                images.dims(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassQueue {
    class_id: u32,
    /// Positions within the view belonging to this class.
    members: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
}

impl ClassQueue {
    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        debug_assert!(n <= self.members.len());
        if self.cursor + n > self.order.len() {
            self.order = self.members.clone();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        out
    }
}

/// Class-balanced mini-batch sampler over one task's training view.
///
/// Each batch spreads `batch_size` evenly over the task's classes; every class
/// reshuffles its own sample order when its epoch is exhausted. Samples never
/// repeat within a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSampler {
    queues: Vec<ClassQueue>,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(view: &SampleView, seed: u64) -> Result<Self> {
        if view.is_empty() {
            return Err(Error::Sampling("empty split".into()));
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (pos, label) in view.labels().into_iter().enumerate() {
            by_class.entry(label).or_default().push(pos);
        }
        let queues = by_class
            .into_iter()
            .map(|(class_id, members)| ClassQueue {
                class_id,
                members,
                order: Vec::new(),
                cursor: 0,
            })
            .collect();
        Ok(Self {
            queues,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    /// Per-class sample counts for the next batch.
    fn quotas(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        let total: usize = self.queues.iter().map(|q| q.members.len()).sum();
        if batch_size == 0 {
            return Err(Error::Sampling("batch size must be at least 1".into()));
        }
        if batch_size > total {
            return Err(Error::Sampling(format!(
                "batch size {batch_size} exceeds split size {total}"
            )));
        }
        let p = self.queues.len();
        let mut quota = vec![batch_size / p; p];
        // remainder goes to randomly chosen classes
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(&mut self.rng);
        for &c in order.iter().take(batch_size % p) {
            quota[c] += 1;
        }
        // classes smaller than their share hand the surplus to the others
        let mut surplus = 0;
        for (q, cls) in quota.iter_mut().zip(&self.queues) {
            if *q > cls.members.len() {
                surplus += *q - cls.members.len();
                *q = cls.members.len();
            }
        }
        while surplus > 0 {
            let mut moved = false;
            for &c in &order {
                if surplus == 0 {
                    break;
                }
                if quota[c] < self.queues[c].members.len() {
                    quota[c] += 1;
                    surplus -= 1;
                    moved = true;
                }
            }
            debug_assert!(moved);
        }
        Ok(quota)
    }

    /// Draws the next batch from `view`, which must be the view the sampler
    /// was built from.
    pub fn next_batch(&mut self, view: &SampleView, batch_size: usize) -> Result<LabeledBatch> {
        let positions = self.next_positions(batch_size)?;
        view.gather(&positions)
    }

    /// Positions (within the view) of the next batch.
    pub fn next_positions(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        let quota = self.quotas(batch_size)?;
        let mut positions = Vec::with_capacity(batch_size);
        for (i, q) in quota.into_iter().enumerate() {
            if q > 0 {
                let taken = self.queues[i].take(q, &mut self.rng);
                positions.extend(taken);
            }
        }
        positions.shuffle(&mut self.rng);
        Ok(positions)
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.queues.iter().map(|q| q.class_id).collect()
    }
}
