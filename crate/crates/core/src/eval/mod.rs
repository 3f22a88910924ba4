//! Accuracy matrix and `A_K`, suites over modes and seeds, and reports.

mod accuracy;
pub mod published;
mod report;
mod suite;

pub use accuracy::{average_accuracy, evaluate_after_task, AccuracyMatrix, RowEvaluation};
pub use report::{
    emit_comparison, emit_report, mean_std, plot_losses, plot_separability, plot_taskwise,
    ComparisonTable, GeneratorPoint, LossPoint, ModeSummary, RunReport, RESULTS_FILE,
};
pub use suite::{check_suite, run_suite, SuiteOutcome};
