use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::dataset::SplitKind;

/// One recorded read of real samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    /// Task being trained when the read happened (0 before training starts).
    pub active_task: usize,
    /// Task that owns the samples read.
    pub owner_task: usize,
    pub split: SplitKind,
    pub samples: usize,
}

impl AccessRecord {
    /// A read of a previous task's training data while a later task trains.
    pub fn is_past_train_read(&self) -> bool {
        self.split == SplitKind::Train && self.owner_task < self.active_task
    }
}

#[derive(Debug, Default)]
struct AuditInner {
    active_task: usize,
    records: Vec<AccessRecord>,
}

/// Shared log of every sample read through a task stream's views.
#[derive(Debug, Clone, Default)]
pub struct AccessAudit {
    inner: Arc<Mutex<AuditInner>>,
}

impl AccessAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_task(&self, task_index: usize) {
        self.inner.lock().unwrap().active_task = task_index;
    }

    pub fn active_task(&self) -> usize {
        self.inner.lock().unwrap().active_task
    }

    pub(crate) fn record(&self, owner_task: usize, split: SplitKind, samples: usize) {
        let mut inner = self.inner.lock().unwrap();
        let active_task = inner.active_task;
        // coalesce consecutive reads of the same kind
        if let Some(last) = inner.records.last_mut() {
            if last.active_task == active_task && last.owner_task == owner_task && last.split == split {
                last.samples += samples;
                return;
            }
        }
        inner.records.push(AccessRecord {
            active_task,
            owner_task,
            split,
            samples,
        });
    }

    pub fn records(&self) -> Vec<AccessRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    /// Number of samples read from a past task's training split.
    pub fn past_train_reads(&self) -> usize {
        self.inner
            .lock()
            .unwrap()
            .records
            .iter()
            .filter(|r| r.is_past_train_read())
            .map(|r| r.samples)
            .sum()
    }

    pub fn clear(&self) {
        self.inner.lock().unwrap().records.clear();
    }
}
