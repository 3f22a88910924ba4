use std::collections::BTreeSet;

use super::report::{ComparisonTable, RunReport};
use crate::error::{Error, Result};
use crate::trainer::{Mode, RunConfig, Trainer};

/// Reports of the successful runs of a suite and its comparison table.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub table: ComparisonTable,
    pub reports: Vec<RunReport>,
    pub failures: Vec<(Mode, u64, String)>,
}

/// `config` with the fields a suite may vary reset, for comparison.
fn invariant_part(config: &RunConfig) -> RunConfig {
    RunConfig {
        mode: Mode::Full,
        seed: 0,
        output_dir: Default::default(),
        ..config.clone()
    }
}

/// Checks that configurations differ only in mode, seed and output
/// directory, and that output directories are distinct.
pub fn check_suite(configs: &[RunConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Err(Error::Config("empty suite".into()));
    };
    let base = invariant_part(first);
    if let Some(c) = configs.iter().find(|c| invariant_part(c) != base) {
        return Err(Error::Config(format!(
            "suite configs may differ only in mode and seed; `{}` (mode {}, seed {}) differs",
            c.output_dir.display(),
            c.mode,
            c.seed
        )));
    }
    let dirs: BTreeSet<_> = configs.iter().map(|c| &c.output_dir).collect();
    if dirs.len() != configs.len() {
        return Err(Error::Config("suite runs need distinct output directories".into()));
    }
    Ok(())
}

/// Runs every configuration in turn. A failing run is recorded against its
/// mode and does not stop the others.
pub fn run_suite(configs: &[RunConfig]) -> Result<SuiteOutcome> {
    check_suite(configs)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for config in configs {
        log::info!("suite run: mode {} seed {}", config.mode, config.seed);
        match Trainer::from_config(config.clone()).and_then(|mut t| t.run()) {
            Ok(r) => reports.push(r),
            Err(e) => {
                log::warn!("run mode {} seed {} failed: {e}", config.mode, config.seed);
                failures.push((config.mode, config.seed, e.to_string()));
            }
        }
    }
    let table = ComparisonTable::from_reports(&reports, &failures);
    Ok(SuiteOutcome { table, reports, failures })
}
