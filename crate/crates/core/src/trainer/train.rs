use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::Tensor;
use ndarray::Axis;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{GeneratorLifecycle, Mode, RunConfig};
use super::metrics::{ratio_string, MetricRecord, MetricsLog, StepLosses};
use super::state::{derive_seed, GeneratorState, Teacher, TrainerState, SEED_GENERATOR, SEED_SAMPLER};
use crate::data::{build_task_stream, load_dataset, BatchSampler, Dataset, LabeledBatch, TaskSpec, TaskStream};
use crate::distill::{embedding_distance, kd_loss, value, EmbeddingPair};
use crate::error::{Error, Result};
use crate::eval::{evaluate_after_task, AccuracyMatrix, RunReport};
use crate::generator::{generator_step, sample_latent, GeneratorArch, ReplayGenerator};
use crate::metric::{
    centroid_pull_loss, compute_centroids, mine_triplets, separability_report, to_array,
    triplet_loss, CentroidStore, EmbeddingBackbone,
};
use crate::nn::{Adam, AdamConfig, Optimizer};
use crate::DEVICE;

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const METRICS_LOG: &str = "metrics.log";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CENTROIDS_FILE: &str = "centroids.bin";
pub const REPORT_DIR: &str = "report";

/// Value and components of the student objective
/// `L_tri(x_k) + λ·L_KD(x_g) + D_E(M_k(x_g), M_{k−1}(x_g))`.
#[derive(Debug, Clone)]
pub struct StudentObjective {
    pub total: Tensor,
    pub losses: StepLosses,
    /// Updated running centre when the real batch holds a single class.
    pub center: Option<Vec<f32>>,
}

/// Builds the student loss for one step without updating anything.
///
/// Distillation and `D_E` are included only when a teacher, a synthetic
/// batch and a replay mode are all present. A real batch holding one class
/// has no negatives; it is pulled towards a running centre instead of the
/// triplet loss.
pub fn student_objective(
    student: &EmbeddingBackbone,
    teacher: Option<&EmbeddingBackbone>,
    real: &LabeledBatch,
    synthetic: Option<&Tensor>,
    center: Option<&[f32]>,
    config: &RunConfig,
) -> Result<StudentObjective> {
    let z = student.embed(real)?.embedding;
    let single_class = real.labels.iter().all(|l| *l == real.labels[0]);
    let (tri, triplets, center) = if single_class {
        let batch_mean = to_array(&z)?
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::Sampling("empty batch".into()))?;
        let m = config.center_momentum as f32;
        let next: Vec<f32> = match center {
            Some(c) => c.iter().zip(batch_mean.iter()).map(|(c, b)| m * c + (1.0 - m) * b).collect(),
            None => batch_mean.to_vec(),
        };
        let c = Tensor::from_slice(&next, next.len(), &DEVICE)?;
        (centroid_pull_loss(&z, &c)?, 0, Some(next))
    } else {
        let mined = mine_triplets(to_array(&z)?.view(), &real.labels)?;
        let t = triplet_loss(&z, &mined, config.margin)?;
        (t.value, t.num_triplets, None)
    };
    let mut losses = StepLosses {
        l_tri: value(&tri)?,
        triplets,
        ..StepLosses::default()
    };
    let mut total = tri;
    if let (Some(terms), Some(teacher), Some(x_g)) = (config.mode.kd_terms(), teacher, synthetic) {
        let s = student.forward(x_g)?;
        let t = teacher.forward(&x_g.detach())?;
        let pair = EmbeddingPair::new(s.embedding, t.embedding)?;
        let kd = kd_loss(&t.feature_maps, &s.feature_maps, &pair, terms, config.fam_variant)?;
        let d_e = embedding_distance(&pair)?;
        losses.l_fam = value(&kd.fam)?;
        losses.l_cov = value(&kd.cov)?;
        losses.d_e = value(&d_e)?;
        total = ((total + kd.total.affine(config.lambda, 0.0)?)? + d_e)?;
    }
    losses.total = value(&total)?;
    for (name, v) in [
        ("L_tri", losses.l_tri),
        ("L_FAM", losses.l_fam),
        ("L_Cov", losses.l_cov),
        ("D_E", losses.d_e),
        ("total loss", losses.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(StudentObjective { total, losses, center })
}

/// One optimizer update of the student on the objective above.
pub fn student_step(
    student: &EmbeddingBackbone,
    opt: &mut dyn Optimizer,
    teacher: Option<&EmbeddingBackbone>,
    real: &LabeledBatch,
    synthetic: Option<&Tensor>,
    center: &mut Option<Vec<f32>>,
    config: &RunConfig,
) -> Result<StepLosses> {
    let obj = student_objective(student, teacher, real, synthetic, center.as_deref(), config)?;
    let grads = obj.total.backward()?;
    opt.step(student.params(), &grads)?;
    if obj.center.is_some() {
        *center = obj.center;
    }
    Ok(obj.losses)
}

/// Frozen deep copy of `student` and its parameter checksum.
pub fn snapshot_teacher(student: &EmbeddingBackbone) -> Result<Teacher> {
    let model = student.freeze()?;
    let checksum = model.params().checksum()?;
    Ok(Teacher { model, checksum })
}

/// Drives a run over a task stream and owns its run directory.
pub struct Trainer {
    config: RunConfig,
    stream: TaskStream,
    /// The single pooled task of joint mode.
    pooled: Option<TaskSpec>,
    state: TrainerState,
    run_dir: PathBuf,
    log: MetricsLog,
    started: Instant,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("run_dir", &self.run_dir)
            .field("task", &self.state.task)
            .field("epoch", &self.state.epoch)
            .finish()
    }
}

/// Loads the configured dataset and splits it into tasks.
pub fn prepare_stream(config: &RunConfig) -> Result<TaskStream> {
    let dataset: Arc<Dataset> = load_dataset(&config.data)?;
    build_task_stream(dataset, &config.protocol, config.seed)
}

impl Trainer {
    /// Starts a fresh run in `run_dir`, writing `config.snapshot` and an
    /// empty `metrics.log`.
    pub fn new(config: RunConfig, stream: TaskStream, run_dir: &Path) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(run_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(run_dir, e))?;
        let snapshot = run_dir.join(CONFIG_SNAPSHOT);
        fs::write(&snapshot, config.to_toml_string()?).map_err(|e| Error::io(&snapshot, e))?;
        let log = MetricsLog::create(&run_dir.join(METRICS_LOG))?;
        let state = TrainerState::new(&config, &stream)?;
        let pooled = (config.mode == Mode::Joint).then(|| stream.pooled_task());
        Ok(Self {
            config,
            stream,
            pooled,
            state,
            run_dir: run_dir.to_path_buf(),
            log,
            started: Instant::now(),
        })
    }

    /// Fresh run from a configuration, in `config.output_dir`.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        let stream = prepare_stream(&config)?;
        let dir = config.output_dir.clone();
        Self::new(config, stream, &dir)
    }

    /// Continues a run from a checkpoint. The metrics log is cut back to the
    /// checkpoint so the finished log equals that of an uninterrupted run.
    pub fn resume(stream: TaskStream, run_dir: &Path, checkpoint: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(checkpoint)?;
        let config = ckpt.config;
        let state = ckpt.state;
        let log = MetricsLog::resume(&run_dir.join(METRICS_LOG), state.metrics_lines)?;
        if state.sampler.is_some() {
            stream.audit().begin_task(state.task);
        }
        let pooled = (config.mode == Mode::Joint).then(|| stream.pooled_task());
        Ok(Self {
            config,
            stream,
            pooled,
            state,
            run_dir: run_dir.to_path_buf(),
            log,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn stream(&self) -> &TaskStream {
        &self.stream
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join(METRICS_LOG)
    }

    /// Number of tasks the trainer iterates over (1 in joint mode).
    pub fn training_tasks(&self) -> usize {
        if self.pooled.is_some() {
            1
        } else {
            self.stream.total_tasks()
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.task > self.training_tasks()
    }

    fn task_spec(&self, k: usize) -> Result<TaskSpec> {
        match &self.pooled {
            Some(p) => Ok(p.clone()),
            None => self.stream.task(k).cloned().ok_or(Error::TaskOrder {
                expected: self.state.task,
                got: k,
            }),
        }
    }

    fn epochs(&self) -> usize {
        if self.pooled.is_some() {
            self.config.pooled_epochs(self.stream.total_tasks())
        } else {
            self.config.epochs
        }
    }

    fn record(&mut self, record: MetricRecord) -> Result<()> {
        self.log.append(&record)?;
        self.state.metrics_lines = self.log.lines();
        Ok(())
    }

    /// Trains task `k`, which must be the next task of the stream.
    pub fn train_task(&mut self, k: usize) -> Result<()> {
        if k != self.state.task || self.is_finished() {
            return Err(Error::TaskOrder {
                expected: self.state.task,
                got: k,
            });
        }
        while self.state.task == k {
            self.step_epoch()?;
        }
        Ok(())
    }

    /// Runs every remaining task, then writes `centroids.bin` and the report.
    pub fn run(&mut self) -> Result<RunReport> {
        while !self.is_finished() {
            self.step_epoch()?;
        }
        self.finalize()
    }

    /// Advances by one epoch, starting or finishing tasks as needed. Returns
    /// `false` once the stream is exhausted.
    pub fn step_epoch(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let k = self.state.task;
        let task = self.task_spec(k)?;
        if self.state.sampler.is_none() {
            self.start_task(&task)?;
        }
        self.run_epoch(&task)?;
        if self.state.epoch == self.epochs() {
            self.finish_task(&task)?;
        } else if self.config.checkpoint_every > 0
            && self.state.epoch % self.config.checkpoint_every == 0
        {
            self.checkpoint(&format!("task{k:02}_epoch{:03}.ckpt", self.state.epoch))?;
        }
        Ok(!self.is_finished())
    }

    fn replay_active(&self) -> bool {
        self.config.mode.uses_replay() && self.state.teacher.is_some()
    }

    fn start_task(&mut self, task: &TaskSpec) -> Result<()> {
        let k = self.state.task;
        self.stream.audit().begin_task(k);
        if k >= 2 && self.state.teacher.is_none() {
            return Err(Error::MissingTeacher(k));
        }
        self.state.sampler = Some(BatchSampler::new(
            &task.train,
            derive_seed(self.config.seed, SEED_SAMPLER, k as u64),
        )?);
        self.state.student_opt = Adam::new(
            AdamConfig::new(self.config.lr_student, self.config.weight_decay),
            self.state.student.params(),
        )?;
        self.state.center = None;
        self.state.epoch = 0;
        let replay = self.replay_active();
        if replay
            && (self.config.generator == GeneratorLifecycle::PerTask || self.state.generator.is_none())
        {
            let mut arch = GeneratorArch::new(self.stream.image_shape);
            arch.hidden = self.config.generator_hidden;
            let model = ReplayGenerator::new(
                arch,
                &self.stream.normalization,
                derive_seed(self.config.seed, SEED_GENERATOR, k as u64),
            )?;
            let opt = Adam::new(
                AdamConfig::new(self.config.lr_generator, self.config.weight_decay),
                model.params(),
            )?;
            self.state.generator = Some(GeneratorState { model, opt });
        }
        let synthetic = if replay { self.config.synthetic_batch } else { 0 };
        let record = MetricRecord::TaskStart {
            task: k,
            classes: task.class_ids.clone(),
            real_batch: self.config.batch_size,
            synthetic_batch: synthetic,
            ratio: ratio_string(synthetic, self.config.batch_size),
            teacher_checksum: self.state.teacher.as_ref().map(|t| t.checksum.clone()),
        };
        self.record(record)?;
        self.state.check_invariants()
    }

    fn run_epoch(&mut self, task: &TaskSpec) -> Result<()> {
        let k = self.state.task;
        let e = self.state.epoch;
        let cfg = self.config.clone();
        let replay = self.replay_active();
        let synthetic = if replay {
            let z = sample_latent(cfg.synthetic_batch, crate::generator::LATENT_DIM, &mut self.state.rng)?;
            let teacher = self.state.teacher.as_ref().ok_or(Error::MissingTeacher(k))?;
            let gen = self.state.generator.as_mut().ok_or_else(|| {
                Error::Invariant("replay active without a generator".into())
            })?;
            let mut losses = Vec::with_capacity(cfg.generator_steps);
            for _ in 0..cfg.generator_steps {
                losses.push(generator_step(&gen.model, &mut gen.opt, &self.state.student, &teacher.model, &z)?);
            }
            let x_g = gen.model.generate(&z)?.detach();
            for (step, l_g) in losses.into_iter().enumerate() {
                self.record(MetricRecord::Generator { task: k, epoch: e, step, l_g })?;
            }
            Some(x_g)
        } else {
            None
        };
        let n_synthetic = synthetic.as_ref().map_or(0, |x| x.dims()[0]);
        for step in 0..cfg.student_steps {
            let sampler = self.state.sampler.as_mut().ok_or_else(|| {
                Error::Invariant("no sampler for the active task".into())
            })?;
            let real = sampler.next_batch(&task.train, cfg.batch_size)?;
            let losses = student_step(
                &self.state.student,
                &mut self.state.student_opt,
                self.state.teacher.as_ref().map(|t| &t.model),
                &real,
                synthetic.as_ref(),
                &mut self.state.center,
                &cfg,
            )?;
            self.state.global_step += 1;
            let record = MetricRecord::Student {
                task: k,
                epoch: e,
                step,
                global_step: self.state.global_step,
                n_real: real.len(),
                n_synthetic,
                losses,
            };
            self.record(record)?;
        }
        let teacher_checksum = match &self.state.teacher {
            Some(t) => {
                let now = t.model.params().checksum()?;
                if now != t.checksum {
                    return Err(Error::Invariant(format!("teacher changed during task {k}")));
                }
                Some(now)
            }
            None => None,
        };
        self.state.epoch += 1;
        self.record(MetricRecord::EpochEnd { task: k, epoch: e, teacher_checksum })?;
        self.log.flush()
    }

    fn finish_task(&mut self, task: &TaskSpec) -> Result<()> {
        let k = self.state.task;
        let chunk = self.config.eval_chunk;
        let student = &self.state.student;
        let mut rows = Vec::new();
        if self.pooled.is_some() {
            for t in &self.stream.tasks {
                self.state.centroids.extend(compute_centroids(student, t, chunk)?)?;
            }
            for i in 1..=self.stream.total_tasks() {
                let store = restrict(&self.state.centroids, &self.stream.classes_through(i))?;
                rows.push(evaluate_after_task(student, &store, &self.stream, i, chunk)?);
            }
        } else {
            self.state.centroids.extend(compute_centroids(student, task, chunk)?)?;
            rows.push(evaluate_after_task(student, &self.state.centroids, &self.stream, k, chunk)?);
        }
        for row in &rows {
            self.state.accuracy.push_row(row.accuracies.clone(), row.counts.clone())?;
            let sep = subsample(&row.embeddings, &row.labels, self.config.separability_samples);
            self.state
                .separability
                .push(separability_report(sep.0.view(), &sep.1).ok());
        }
        self.state.teacher = Some(snapshot_teacher(&self.state.student)?);
        let last = rows.last().expect("at least one row");
        let record = MetricRecord::TaskEnd {
            task: k,
            accuracies: last.accuracies.clone(),
            separability: self.state.separability.last().copied().flatten().map(|s| s.ratio),
            student_checksum: self.state.student.params().checksum()?,
            past_train_reads: self.stream.audit().past_train_reads(),
        };
        self.record(record)?;
        self.log.flush()?;
        self.state.task += 1;
        self.state.epoch = 0;
        self.state.sampler = None;
        self.state.center = None;
        self.checkpoint(&format!("task{k:02}_final.ckpt"))?;
        log::info!(
            "task {k} done: accuracies {:?}",
            last.accuracies.iter().map(|a| format!("{:.2}", 100.0 * a)).collect::<Vec<_>>()
        );
        Ok(())
    }

    fn checkpoint(&self, name: &str) -> Result<PathBuf> {
        let path = self.run_dir.join(CHECKPOINT_DIR).join(name);
        save_checkpoint(&self.state, &self.config, &path)?;
        Ok(path)
    }

    /// Writes `centroids.bin` and the report of a finished run.
    pub fn finalize(&mut self) -> Result<RunReport> {
        if !self.is_finished() {
            return Err(Error::IncompleteMatrix("run has unfinished tasks".into()));
        }
        self.log.flush()?;
        self.state.centroids.save(&self.run_dir.join(CENTROIDS_FILE))?;
        let report = RunReport::from_run(
            &self.config,
            &self.stream,
            &self.state,
            &self.metrics_path(),
            self.started.elapsed().as_secs_f64(),
        )?;
        crate::eval::emit_report(&report, &self.run_dir.join(REPORT_DIR))?;
        Ok(report)
    }

    pub fn accuracy(&self) -> &AccuracyMatrix {
        &self.state.accuracy
    }
}

/// Copy of `store` holding only `classes`.
fn restrict(store: &CentroidStore, classes: &[u32]) -> Result<CentroidStore> {
    let mut out = CentroidStore::new();
    for &c in classes {
        let centroid = store.get(c).ok_or(Error::MissingCentroid(c))?;
        out.insert(c, centroid.clone())?;
    }
    Ok(out)
}

/// Evenly strided subset of at most `cap` rows.
fn subsample(z: &ndarray::Array2<f32>, labels: &[u32], cap: usize) -> (ndarray::Array2<f32>, Vec<u32>) {
    let n = labels.len();
    if n <= cap || cap == 0 {
        return (z.clone(), labels.to_vec());
    }
    let idx: Vec<usize> = (0..cap).map(|i| i * n / cap).collect();
    (z.select(Axis(0), &idx), idx.iter().map(|&i| labels[i]).collect())
}
