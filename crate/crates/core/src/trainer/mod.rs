//! Task-by-task training: the per-epoch generator and student loops, the
//! teacher lifecycle, checkpoints and the metrics log.

mod checkpoint;
mod config;
mod metrics;
mod state;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{BackboneConfig, GeneratorLifecycle, Mode, RunConfig};
pub use metrics::{ratio_string, read_metrics, MetricRecord, MetricsLog, StepLosses};
pub use state::{GeneratorState, Teacher, TrainerState};
pub use train::{
    prepare_stream, snapshot_teacher, student_objective, student_step, StudentObjective, Trainer,
    CENTROIDS_FILE, CHECKPOINT_DIR, CONFIG_SNAPSHOT, METRICS_LOG, REPORT_DIR,
};
