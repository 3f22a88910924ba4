use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::state::{GeneratorState, Teacher, TrainerState};
use crate::data::{BatchSampler, Normalization};
use crate::error::{Error, Result};
use crate::eval::AccuracyMatrix;
use crate::generator::{GeneratorArch, ReplayGenerator};
use crate::metric::{BackboneArch, CentroidStore, EmbeddingBackbone, SeparabilityReport};
use crate::nn::{Adam, AdamState, ParamState};

const MAGIC: &[u8; 8] = b"RKDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TeacherData {
    params: ParamState,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct GeneratorData {
    arch: GeneratorArch,
    normalization: Normalization,
    params: ParamState,
    opt: AdamState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointData {
    config: RunConfig,
    task: usize,
    epoch: usize,
    arch: BackboneArch,
    student: ParamState,
    student_opt: AdamState,
    teacher: Option<TeacherData>,
    generator: Option<GeneratorData>,
    centroids: CentroidStore,
    accuracy: AccuracyMatrix,
    separability: Vec<Option<SeparabilityReport>>,
    rng: ChaCha8Rng,
    sampler: Option<BatchSampler>,
    center: Option<Vec<f32>>,
    global_step: u64,
    metrics_lines: u64,
}

/// A restored checkpoint: the state and the configuration it was produced
/// under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainerState,
}

/// Writes the full trainer state atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainerState, config: &RunConfig, path: &Path) -> Result<()> {
    let data = CheckpointData {
        config: config.clone(),
        task: state.task,
        epoch: state.epoch,
        arch: state.student.arch().clone(),
        student: state.student.params().to_state()?,
        student_opt: state.student_opt.to_state(state.student.params())?,
        teacher: state
            .teacher
            .as_ref()
            .map(|t| -> Result<TeacherData> {
                Ok(TeacherData {
                    params: t.model.params().to_state()?,
                    checksum: t.checksum.clone(),
                })
            })
            .transpose()?,
        generator: state
            .generator
            .as_ref()
            .map(|g| -> Result<GeneratorData> {
                Ok(GeneratorData {
                    arch: g.model.arch().clone(),
                    normalization: g.model.normalization().clone(),
                    params: g.model.params().to_state()?,
                    opt: g.opt.to_state(g.model.params())?,
                })
            })
            .transpose()?,
        centroids: state.centroids.clone(),
        accuracy: state.accuracy.clone(),
        separability: state.separability.clone(),
        rng: state.rng.clone(),
        sampler: state.sampler.clone(),
        center: state.center.clone(),
        global_step: state.global_step,
        metrics_lines: state.metrics_lines,
    };
    let payload = bincode::serialize(&data).map_err(|e| Error::Serde(e.to_string()))?;
    let mut bytes = Vec::with_capacity(payload.len() + 12);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&payload);
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let data: CheckpointData =
        bincode::deserialize(&bytes[12..]).map_err(|e| corrupt(e.to_string()))?;

    let mut student = EmbeddingBackbone::new(data.arch.clone(), 0)?;
    student.params_mut().load_state(&data.student)?;
    let student_opt = Adam::from_state(&data.student_opt, student.params())?;
    let teacher = match data.teacher {
        Some(t) => {
            let mut model = EmbeddingBackbone::new(data.arch.clone(), 0)?;
            model.params_mut().load_state(&t.params)?;
            let model = model.freeze()?;
            let checksum = model.params().checksum()?;
            if checksum != t.checksum {
                return Err(corrupt("teacher checksum mismatch".into()));
            }
            Some(Teacher { model, checksum })
        }
        None => None,
    };
    let generator = match data.generator {
        Some(g) => {
            let mut model = ReplayGenerator::new(g.arch, &g.normalization, 0)?;
            model.params_mut().load_state(&g.params)?;
            let opt = Adam::from_state(&g.opt, model.params())?;
            Some(GeneratorState { model, opt })
        }
        None => None,
    };
    Ok(Checkpoint {
        config: data.config,
        state: TrainerState {
            task: data.task,
            epoch: data.epoch,
            student,
            student_opt,
            teacher,
            generator,
            centroids: data.centroids,
            accuracy: data.accuracy,
            separability: data.separability,
            rng: data.rng,
            sampler: data.sampler,
            center: data.center,
            global_step: data.global_step,
            metrics_lines: data.metrics_lines,
        },
    })
}
