use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::audit::AccessAudit;
use super::dataset::{Dataset, ImageShape, Normalization, SplitKind};
use super::sampler::LabeledBatch;
use crate::error::{Error, Result};
use crate::DEVICE;

/// How classes are grouped into tasks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitProtocol {
    /// Explicit partition, one list of class ids per task. `None` selects the
    /// dataset's built-in split.
    #[serde(default)]
    pub tasks: Option<Vec<Vec<u32>>>,
    /// Permute the class order by seed while keeping per-task class counts.
    #[serde(default)]
    pub shuffle_class_order: bool,
    #[serde(default)]
    pub max_train_per_class: Option<usize>,
    #[serde(default)]
    pub max_test_per_class: Option<usize>,
}

impl SplitProtocol {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn explicit(tasks: Vec<Vec<u32>>) -> Self {
        Self {
            tasks: Some(tasks),
            ..Self::default()
        }
    }
}

/// Names of datasets with a built-in task split.
pub const KNOWN_DATASETS: &[&str] = &[
    "cifar10",
    "oct",
    "pathmnist",
    "picai",
    "synthetic-blobs",
    "image-folder",
];

/// The built-in partition of a dataset and the size of its class universe.
pub fn builtin_partition(dataset_name: &str) -> Result<Vec<Vec<u32>>> {
    Ok(match dataset_name {
        "cifar10" => vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]],
        // MedMNIST labels: 0 CNV, 1 DME, 2 drusen, 3 normal
        "oct" => vec![vec![3, 0], vec![1], vec![2]],
        "pathmnist" => vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]],
        // class directories ordered ISUP0, ISUP1, ISUP2, ISUP3
        "picai" => vec![vec![0, 3], vec![1, 2]],
        "synthetic-blobs" => vec![vec![0, 1], vec![2, 3]],
        "image-folder" => {
            return Err(Error::InvalidPartition(
                "image-folder datasets need an explicit task partition".into(),
            ))
        }
        other => return Err(Error::UnknownDataset(other.to_string())),
    })
}

/// A subset of one split of a dataset, owned by a task. Every read of
/// image data is reported to the stream's access audit.
#[derive(Debug, Clone)]
pub struct SampleView {
    dataset: Arc<Dataset>,
    kind: SplitKind,
    owner_task: usize,
    indices: Vec<usize>,
    audit: AccessAudit,
}

impl SampleView {
    pub fn new(
        dataset: Arc<Dataset>,
        kind: SplitKind,
        owner_task: usize,
        indices: Vec<usize>,
        audit: AccessAudit,
    ) -> Self {
        Self {
            dataset,
            kind,
            owner_task,
            indices,
            audit,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn kind(&self) -> SplitKind {
        self.kind
    }

    pub fn owner_task(&self) -> usize {
        self.owner_task
    }

    pub fn shape(&self) -> ImageShape {
        self.dataset.shape
    }

    /// Dataset indices of the samples in this view.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Label metadata; reading labels does not touch image data.
    pub fn labels(&self) -> Vec<u32> {
        let labels = &self.dataset.split(self.kind).labels;
        self.indices.iter().map(|&i| labels[i]).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        let ids = &self.dataset.split(self.kind).ids;
        self.indices.iter().map(|&i| ids[i]).collect()
    }

    /// Materializes the samples at `positions` (positions within the view).
    pub fn gather(&self, positions: &[usize]) -> Result<LabeledBatch> {
        if positions.is_empty() {
            return Err(Error::Sampling("cannot gather an empty batch".into()));
        }
        let shape = self.dataset.shape;
        let split = self.dataset.split(self.kind);
        let mut pixels = Vec::with_capacity(positions.len() * shape.numel());
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let idx = *self.indices.get(p).ok_or_else(|| {
                Error::Sampling(format!("position {p} outside view of {}", self.len()))
            })?;
            pixels.extend_from_slice(self.dataset.image(self.kind, idx));
            labels.push(split.labels[idx]);
        }
        self.audit.record(self.owner_task, self.kind, positions.len());
        let images = Tensor::from_vec(
            pixels,
            (positions.len(), shape.channels, shape.height, shape.width),
            &DEVICE,
        )?;
        LabeledBatch::new(images, labels)
    }

    /// Iterates the view in order, `chunk` samples at a time.
    pub fn chunks(&self, chunk: usize) -> impl Iterator<Item = Result<LabeledBatch>> + '_ {
        let chunk = chunk.max(1);
        (0..self.len()).step_by(chunk).map(move |start| {
            let end = (start + chunk).min(self.len());
            let positions: Vec<usize> = (start..end).collect();
            self.gather(&positions)
        })
    }
}

/// One incremental task: a disjoint class subset with its train/test samples.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    /// 1-based position in the stream.
    pub task_index: usize,
    pub class_ids: Vec<u32>,
    pub train: SampleView,
    pub test: SampleView,
}

impl TaskSpec {
    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }
}

/// Ordered sequence of tasks over disjoint class subsets.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub dataset_name: String,
    pub image_shape: ImageShape,
    pub class_names: BTreeMap<u32, String>,
    pub normalization: Normalization,
    pub tasks: Vec<TaskSpec>,
    dataset: Arc<Dataset>,
    audit: AccessAudit,
}

impl TaskStream {
    pub fn total_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task `k`, 1-based.
    pub fn task(&self, k: usize) -> Option<&TaskSpec> {
        k.checked_sub(1).and_then(|i| self.tasks.get(i))
    }

    pub fn audit(&self) -> &AccessAudit {
        &self.audit
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    /// Class ids of tasks `1..=k`, sorted.
    pub fn classes_through(&self, k: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .tasks
            .iter()
            .take(k)
            .flat_map(|t| t.class_ids.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn partition(&self) -> Vec<Vec<u32>> {
        self.tasks.iter().map(|t| t.class_ids.clone()).collect()
    }

    /// A single task holding every class and sample of the stream, used for
    /// pooled (joint) training.
    pub fn pooled_task(&self) -> TaskSpec {
        let class_ids: Vec<u32> = self.classes_through(self.tasks.len());
        let cat = |kind: SplitKind| {
            let mut idx: Vec<usize> = self
                .tasks
                .iter()
                .flat_map(|t| match kind {
                    SplitKind::Train => t.train.indices().to_vec(),
                    SplitKind::Test => t.test.indices().to_vec(),
                })
                .collect();
            idx.sort_unstable();
            SampleView::new(self.dataset.clone(), kind, 1, idx, self.audit.clone())
        };
        TaskSpec {
            task_index: 1,
            class_ids,
            train: cat(SplitKind::Train),
            test: cat(SplitKind::Test),
        }
    }
}

fn validate_partition(partition: &[Vec<u32>], num_classes: usize) -> Result<()> {
    if partition.is_empty() {
        return Err(Error::InvalidPartition("no tasks".into()));
    }
    let mut seen = BTreeSet::new();
    for (t, classes) in partition.iter().enumerate() {
        if classes.is_empty() {
            return Err(Error::InvalidPartition(format!("task {} has no classes", t + 1)));
        }
        for &c in classes {
            if c as usize >= num_classes {
                return Err(Error::InvalidPartition(format!(
                    "class {c} does not exist (dataset has {num_classes} classes)"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::InvalidPartition(format!(
                    "class {c} appears in more than one task"
                )));
            }
        }
    }
    Ok(())
}

fn select(labels: &[u32], classes: &[u32], cap: Option<usize>) -> Vec<usize> {
    let wanted: BTreeSet<u32> = classes.iter().copied().collect();
    let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if !wanted.contains(l) {
            continue;
        }
        let n = taken.entry(*l).or_default();
        if cap.is_some_and(|c| *n >= c) {
            continue;
        }
        *n += 1;
        out.push(i);
    }
    out
}

/// Splits a dataset into an ordered task stream.
///
/// With no explicit partition the dataset's built-in split is used and must
/// cover its whole class universe. `shuffle_class_order` permutes the classes
/// by `seed`, keeping the number of classes per task.
pub fn build_task_stream(
    dataset: Arc<Dataset>,
    protocol: &SplitProtocol,
    seed: u64,
) -> Result<TaskStream> {
    let num_classes = dataset.num_classes();
    let mut partition = match &protocol.tasks {
        Some(p) => p.clone(),
        None => {
            let p = builtin_partition(&dataset.name)?;
            let universe: usize = p.iter().map(Vec::len).sum();
            if universe != num_classes {
                return Err(Error::InvalidPartition(format!(
                    "built-in split of `{}` covers {universe} classes, dataset has {num_classes}",
                    dataset.name
                )));
            }
            p
        }
    };
    validate_partition(&partition, num_classes)?;

    if protocol.shuffle_class_order {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes: Vec<u32> = partition.iter().flatten().copied().collect();
        classes.shuffle(&mut rng);
        let mut it = classes.into_iter();
        for task in partition.iter_mut() {
            for slot in task.iter_mut() {
                *slot = it.next().expect("sizes preserved");
            }
        }
    }

    let audit = AccessAudit::new();
    let mut tasks = Vec::with_capacity(partition.len());
    for (i, class_ids) in partition.into_iter().enumerate() {
        let task_index = i + 1;
        let train_idx = select(&dataset.train.labels, &class_ids, protocol.max_train_per_class);
        let test_idx = select(&dataset.test.labels, &class_ids, protocol.max_test_per_class);
        for &c in &class_ids {
            if !train_idx.iter().any(|&j| dataset.train.labels[j] == c) {
                return Err(Error::Dataset(format!(
                    "class {c} has no training samples"
                )));
            }
        }
        tasks.push(TaskSpec {
            task_index,
            class_ids,
            train: SampleView::new(dataset.clone(), SplitKind::Train, task_index, train_idx, audit.clone()),
            test: SampleView::new(dataset.clone(), SplitKind::Test, task_index, test_idx, audit.clone()),
        });
    }

    Ok(TaskStream {
        dataset_name: dataset.name.clone(),
        image_shape: dataset.shape,
        class_names: dataset.class_names.clone(),
        normalization: dataset.normalization.clone(),
        tasks,
        dataset,
        audit,
    })
}
