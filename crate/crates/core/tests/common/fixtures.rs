//! Small run configurations that train in about a second.

use std::path::Path;

use replaykd::data::adapters::BlobsConfig;
use replaykd::data::{DataSource, SplitProtocol};
use replaykd::trainer::{BackboneConfig, Mode, RunConfig};

/// 4 classes of 8×8 blobs in two tasks, a 16-dimensional two-stage backbone
/// and two epochs per task.
pub fn small_config(mode: Mode, seed: u64, out: &Path) -> RunConfig {
    RunConfig {
        mode,
        seed,
        epochs: 2,
        lr_student: 1e-3,
        batch_size: 16,
        synthetic_batch: 4,
        generator_hidden: [8, 4],
        eval_chunk: 64,
        separability_samples: 200,
        output_dir: out.to_path_buf(),
        backbone: BackboneConfig {
            preset: "tiny".into(),
            stage_widths: Some(vec![4, 8]),
            blocks_per_stage: Some(1),
            embedding_dim: Some(16),
        },
        data: DataSource {
            dataset: "synthetic-blobs".into(),
            blobs: BlobsConfig {
                train_per_class: 16,
                test_per_class: 8,
                height: 8,
                width: 8,
                ..BlobsConfig::default()
            },
            ..DataSource::default()
        },
        protocol: SplitProtocol::builtin(),
        ..RunConfig::default()
    }
}
