use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DataSource, ImageShape, SplitProtocol};
use crate::distill::{FamVariant, KdTerms};
use crate::error::{Error, Result};
use crate::metric::BackboneArch;

/// Training regime of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Triplet loss plus both distillation terms and `D_E` on generated images.
    #[default]
    Full,
    FamOnly,
    CovOnly,
    /// Sequential training with the triplet loss alone.
    Finetune,
    /// One model trained on all tasks pooled.
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Finetune, Mode::FamOnly, Mode::CovOnly, Mode::Full, Mode::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::FamOnly => "fam_only",
            Mode::CovOnly => "cov_only",
            Mode::Finetune => "finetune",
            Mode::Joint => "joint",
        }
    }

    /// Distillation terms driving the gradient, or `None` for modes without
    /// generative replay.
    pub fn kd_terms(self) -> Option<KdTerms> {
        match self {
            Mode::Full => Some(KdTerms::Both),
            Mode::FamOnly => Some(KdTerms::FamOnly),
            Mode::CovOnly => Some(KdTerms::CovOnly),
            Mode::Finetune | Mode::Joint => None,
        }
    }

    pub fn uses_replay(self) -> bool {
        self.kd_terms().is_some()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Whether the generator is rebuilt at every task or carried over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLifecycle {
    #[default]
    PerTask,
    Persist,
}

/// Encoder choice: a named preset with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub preset: String,
    pub stage_widths: Option<Vec<usize>>,
    pub blocks_per_stage: Option<usize>,
    pub embedding_dim: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            preset: "resnet18".into(),
            stage_widths: None,
            blocks_per_stage: None,
            embedding_dim: None,
        }
    }
}

impl BackboneConfig {
    pub fn arch(&self, input: ImageShape) -> Result<BackboneArch> {
        let mut arch = BackboneArch::preset(&self.preset, input)?;
        if let Some(w) = &self.stage_widths {
            arch.stage_widths = w.clone();
        }
        if let Some(b) = self.blocks_per_stage {
            arch.blocks_per_stage = b;
        }
        if let Some(d) = self.embedding_dim {
            arch.embedding_dim = d;
        }
        Ok(arch)
    }
}

/// Everything that determines a run. Serialized as TOML; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Epochs per task.
    pub epochs: usize,
    /// Epochs of pooled training in joint mode; defaults to `epochs × K`.
    pub joint_epochs: Option<usize>,
    /// Weight of the distillation loss.
    pub lambda: f64,
    pub lr_student: f64,
    pub lr_generator: f64,
    pub weight_decay: f64,
    /// Real images per student step.
    pub batch_size: usize,
    /// Generated images per epoch.
    pub synthetic_batch: usize,
    pub generator_steps: usize,
    pub student_steps: usize,
    pub margin: f64,
    pub fam_variant: FamVariant,
    pub generator: GeneratorLifecycle,
    pub generator_hidden: [usize; 2],
    /// Momentum of the running centre used when a task has a single class.
    pub center_momentum: f64,
    /// Save a checkpoint every this many epochs (0: only at task ends).
    pub checkpoint_every: usize,
    /// Images per forward pass during evaluation and centroid computation.
    pub eval_chunk: usize,
    /// Cap on test embeddings fed to the separability diagnostic.
    pub separability_samples: usize,
    pub output_dir: PathBuf,
    pub backbone: BackboneConfig,
    pub data: DataSource,
    pub protocol: SplitProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
            epochs: 20,
            joint_epochs: None,
            lambda: 0.8,
            lr_student: 1e-5,
            lr_generator: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            synthetic_batch: 16,
            generator_steps: 3,
            student_steps: 20,
            margin: 0.2,
            fam_variant: FamVariant::default(),
            generator: GeneratorLifecycle::default(),
            generator_hidden: [64, 32],
            center_momentum: 0.9,
            checkpoint_every: 0,
            eval_chunk: 256,
            separability_samples: 2000,
            output_dir: PathBuf::from("runs/default"),
            backbone: BackboneConfig::default(),
            data: DataSource::default(),
            protocol: SplitProtocol::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lambda", self.lambda),
            ("lr_student", self.lr_student),
            ("lr_generator", self.lr_generator),
            ("margin", self.margin),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        for (name, v) in [("lr_student", self.lr_student), ("lr_generator", self.lr_generator), ("margin", self.margin)] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return Err(Error::Config("center_momentum must lie in [0, 1)".into()));
        }
        if self.student_steps <= self.generator_steps {
            return Err(Error::Config(format!(
                "student_steps ({}) must exceed generator_steps ({})",
                self.student_steps, self.generator_steps
            )));
        }
        let sizes = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("synthetic_batch", self.synthetic_batch),
            ("generator_steps", self.generator_steps),
            ("eval_chunk", self.eval_chunk),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.synthetic_batch < 2 {
            return Err(Error::Config("synthetic_batch must be at least 2 for the covariance".into()));
        }
        if self.joint_epochs == Some(0) {
            return Err(Error::Config("joint_epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Epochs of the single pooled task in joint mode.
    pub fn pooled_epochs(&self, tasks: usize) -> usize {
        self.joint_epochs.unwrap_or(self.epochs * tasks.max(1))
    }
}
