use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchSampler, TaskStream};
use crate::error::{Error, Result};
use crate::eval::AccuracyMatrix;
use crate::generator::ReplayGenerator;
use crate::metric::{CentroidStore, EmbeddingBackbone, SeparabilityReport};
use crate::nn::{Adam, AdamConfig};

use super::config::RunConfig;

/// Frozen copy of the student that finished the previous task.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub model: EmbeddingBackbone,
    pub checksum: String,
}

#[derive(Debug, Clone)]
pub struct GeneratorState {
    pub model: ReplayGenerator,
    pub opt: Adam,
}

/// Everything that evolves during a run.
#[derive(Debug, Clone)]
pub struct TrainerState {
    /// Task being trained (1-based); `K + 1` once the stream is exhausted.
    pub task: usize,
    /// Completed epochs of `task`.
    pub epoch: usize,
    pub student: EmbeddingBackbone,
    pub student_opt: Adam,
    pub teacher: Option<Teacher>,
    pub generator: Option<GeneratorState>,
    pub centroids: CentroidStore,
    pub accuracy: AccuracyMatrix,
    pub separability: Vec<Option<SeparabilityReport>>,
    /// Source of latent codes.
    pub rng: ChaCha8Rng,
    /// Batch order of the current task; `None` between tasks.
    pub sampler: Option<BatchSampler>,
    /// Running centre for single-class tasks.
    pub center: Option<Vec<f32>>,
    pub global_step: u64,
    /// Lines written to the metrics log so far.
    pub metrics_lines: u64,
}

/// Independent stream seeds derived from the run seed.
pub(crate) fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut x = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(purpose.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) const SEED_BACKBONE: u64 = 1;
pub(crate) const SEED_SAMPLER: u64 = 2;
pub(crate) const SEED_GENERATOR: u64 = 3;
pub(crate) const SEED_LATENT: u64 = 4;

impl TrainerState {
    pub fn new(config: &RunConfig, stream: &TaskStream) -> Result<Self> {
        config.validate()?;
        let arch = config.backbone.arch(stream.image_shape)?;
        let student = EmbeddingBackbone::new(arch, derive_seed(config.seed, SEED_BACKBONE, 0))?;
        let student_opt = Adam::new(
            AdamConfig::new(config.lr_student, config.weight_decay),
            student.params(),
        )?;
        let tasks = if config.mode == super::Mode::Joint { 1 } else { stream.total_tasks() };
        Ok(Self {
            task: 1,
            epoch: 0,
            student,
            student_opt,
            teacher: None,
            generator: None,
            centroids: CentroidStore::new(),
            accuracy: AccuracyMatrix::new(stream.total_tasks()),
            separability: Vec::with_capacity(tasks),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_LATENT, 0)),
            sampler: None,
            center: None,
            global_step: 0,
            metrics_lines: 0,
        })
    }

    /// Checks the lifecycle invariants: a teacher exists exactly from task 2
    /// on, and the student is the only trainable model.
    pub fn check_invariants(&self) -> Result<()> {
        let mid_stream = self.task >= 2;
        if self.teacher.is_some() != mid_stream {
            return Err(Error::Invariant(format!(
                "teacher present = {} at task {}",
                self.teacher.is_some(),
                self.task
            )));
        }
        if !self.student.params().is_trainable() {
            return Err(Error::Invariant("student is frozen".into()));
        }
        if let Some(t) = &self.teacher {
            if t.model.params().is_trainable() {
                return Err(Error::Invariant("teacher is trainable".into()));
            }
        }
        Ok(())
    }
}
