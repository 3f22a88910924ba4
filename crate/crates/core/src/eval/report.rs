use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::accuracy::{average_accuracy, AccuracyMatrix};
use super::published::published_markdown;
use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::trainer::{read_metrics, MetricRecord, Mode, RunConfig, StepLosses, TrainerState};

pub const RESULTS_FILE: &str = "results.json";

/// Student losses at one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub task: usize,
    pub epoch: usize,
    pub global_step: u64,
    #[serde(flatten)]
    pub losses: StepLosses,
}

/// Generator loss at one adversarial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPoint {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
    pub l_g: f64,
}

/// Machine-readable outcome of one run (`results.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    pub partition: Vec<Vec<u32>>,
    /// Accuracy fractions, row `i` holding `a_{i,1..=i}`.
    pub matrix: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    #[serde(rename = "A_K")]
    pub a_k: f64,
    /// Between/within distance ratio of test embeddings after each task;
    /// `null` where undefined.
    pub separability: Vec<Option<f64>>,
    pub loss_curve: Vec<LossPoint>,
    pub generator_curve: Vec<GeneratorPoint>,
    pub wall_clock_secs: f64,
    pub config: RunConfig,
}

impl RunReport {
    pub fn from_run(
        config: &RunConfig,
        stream: &TaskStream,
        state: &TrainerState,
        metrics: &Path,
        wall_clock_secs: f64,
    ) -> Result<Self> {
        let a_k = average_accuracy(&state.accuracy)?;
        let mut loss_curve = Vec::new();
        let mut generator_curve = Vec::new();
        for r in read_metrics(metrics)? {
            match r {
                MetricRecord::Student { task, epoch, global_step, losses, .. } => {
                    loss_curve.push(LossPoint { task, epoch, global_step, losses })
                }
                MetricRecord::Generator { task, epoch, step, l_g } => {
                    generator_curve.push(GeneratorPoint { task, epoch, step, l_g })
                }
                _ => {}
            }
        }
        Ok(Self {
            dataset: stream.dataset_name.clone(),
            mode: config.mode,
            seed: config.seed,
            partition: stream.partition(),
            matrix: state.accuracy.rows().to_vec(),
            counts: state.accuracy.counts().to_vec(),
            a_k,
            separability: state
                .separability
                .iter()
                .map(|s| s.map(|s| s.ratio).filter(|r| r.is_finite()))
                .collect(),
            loss_curve,
            generator_curve,
            wall_clock_secs,
            config: config.clone(),
        })
    }

    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        let mut m = AccuracyMatrix::new(self.matrix.len());
        for (row, counts) in self.matrix.iter().zip(&self.counts) {
            m.push_row(row.clone(), counts.clone())?;
        }
        Ok(m)
    }

    /// `A_K` recomputed from the stored matrix.
    pub fn recompute_a_k(&self) -> Result<f64> {
        average_accuracy(&self.accuracy_matrix()?)
    }

    pub fn final_row(&self) -> &[f64] {
        self.matrix.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Sample mean and sample standard deviation (`n − 1`); the deviation is
/// `None` for fewer than two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Per-mode aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub a_k: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Mean and sample std of the final-row accuracy of each task.
    pub taskwise_mean: Vec<f64>,
    pub taskwise_std: Vec<Option<f64>>,
    /// `(seed, error)` of runs that failed.
    pub failures: Vec<(u64, String)>,
}

/// Rows in the order finetune, fam_only, cov_only, full, joint; modes
/// without any run are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset: String,
    pub rows: Vec<ModeSummary>,
}

impl ComparisonTable {
    pub fn from_reports(reports: &[RunReport], failures: &[(Mode, u64, String)]) -> Self {
        let mut by_mode: BTreeMap<usize, ModeSummary> = BTreeMap::new();
        let order = |m: Mode| Mode::ALL.iter().position(|x| *x == m).unwrap_or(usize::MAX);
        let blank = |mode| ModeSummary {
            mode,
            seeds: Vec::new(),
            a_k: Vec::new(),
            mean: None,
            std: None,
            taskwise_mean: Vec::new(),
            taskwise_std: Vec::new(),
            failures: Vec::new(),
        };
        let mut rows_by_mode: BTreeMap<usize, Vec<&RunReport>> = BTreeMap::new();
        for r in reports {
            rows_by_mode.entry(order(r.mode)).or_default().push(r);
            by_mode.entry(order(r.mode)).or_insert_with(|| blank(r.mode));
        }
        for (mode, seed, err) in failures {
            by_mode
                .entry(order(*mode))
                .or_insert_with(|| blank(*mode))
                .failures
                .push((*seed, err.clone()));
        }
        for (key, runs) in rows_by_mode {
            let row = by_mode.get_mut(&key).expect("row inserted above");
            row.seeds = runs.iter().map(|r| r.seed).collect();
            row.a_k = runs.iter().map(|r| r.a_k).collect();
            (row.mean, row.std) = mean_std(&row.a_k);
            let tasks = runs.iter().map(|r| r.final_row().len()).min().unwrap_or(0);
            for j in 0..tasks {
                let vals: Vec<f64> = runs.iter().map(|r| r.final_row()[j]).collect();
                let (m, s) = mean_std(&vals);
                row.taskwise_mean.push(m.unwrap_or(0.0));
                row.taskwise_std.push(s);
            }
        }
        Self {
            dataset: reports.first().map(|r| r.dataset.clone()).unwrap_or_default(),
            rows: by_mode.into_values().collect(),
        }
    }

    pub fn row(&self, mode: Mode) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Markdown table with accuracies in percent, two decimals.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("**{}**: A_K (%) over seeds, mean ± sample std\n\n", self.dataset);
        s.push_str("| Mode | Runs | A_K (%) | Per seed | Failed |\n|---|---:|---:|---|---:|\n");
        for r in &self.rows {
            let cell = match (r.mean, r.std) {
                (Some(m), Some(sd)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd),
                (Some(m), None) => format!("{:.2}", 100.0 * m),
                _ => "n/a".into(),
            };
            let per_seed: Vec<String> = r
                .seeds
                .iter()
                .zip(&r.a_k)
                .map(|(s, a)| format!("{s}: {:.2}", 100.0 * a))
                .collect();
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.mode,
                r.a_k.len(),
                cell,
                per_seed.join(", "),
                r.failures.len()
            ));
        }
        let failed: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.failures.iter().map(move |(seed, e)| format!("- {} seed {seed}: {e}", r.mode)))
            .collect();
        if !failed.is_empty() {
            s.push_str("\nFailed runs:\n\n");
            s.push_str(&failed.join("\n"));
            s.push('\n');
        }
        s
    }
}

fn matrix_markdown(matrix: &[Vec<f64>]) -> String {
    let k = matrix.len();
    let mut s = String::from("| after task |");
    for j in 1..=k {
        s.push_str(&format!(" task {j} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(k));
    s.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        s.push_str(&format!("| {} |", i + 1));
        for j in 0..k {
            match row.get(j) {
                Some(a) => s.push_str(&format!(" {:.2} |", 100.0 * a)),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `results.json`, `summary.md` and the plots `taskwise.svg`,
/// `losses.svg` and `separability.svg` for one run.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    report.save(&out_dir.join(RESULTS_FILE))?;
    let table = ComparisonTable::from_reports(std::slice::from_ref(report), &[]);
    plot_taskwise(&table, &out_dir.join("taskwise.svg"))?;
    plot_losses(report, &out_dir.join("losses.svg"))?;
    plot_separability(report, &out_dir.join("separability.svg"))?;
    let mut md = format!(
        "# Run report\n\ndataset `{}`, mode `{}`, seed {}\n\nA_K = {:.2}%\n\n",
        report.dataset,
        report.mode,
        report.seed,
        100.0 * report.a_k
    );
    md.push_str("Accuracy matrix (%)\n\n");
    md.push_str(&matrix_markdown(&report.matrix));
    md.push('\n');
    md.push_str(&published_markdown());
    write(&out_dir.join("summary.md"), &md)
}

/// Writes `comparison.json`, `summary.md` and a task-wise accuracy chart
/// with sample-std error bars for a set of runs.
pub fn emit_comparison(
    reports: &[RunReport],
    failures: &[(Mode, u64, String)],
    out_dir: &Path,
) -> Result<ComparisonTable> {
    ensure_dir(out_dir)?;
    let table = ComparisonTable::from_reports(reports, failures);
    write(&out_dir.join("comparison.json"), &serde_json::to_string_pretty(&table)?)?;
    plot_taskwise(&table, &out_dir.join("taskwise.svg"))?;
    let mut md = String::from("# Comparison\n\n");
    md.push_str(&table.to_markdown());
    md.push('\n');
    md.push_str(&published_markdown());
    write(&out_dir.join("summary.md"), &md)?;
    Ok(table)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

const PALETTE: [RGBColor; 5] = [
    RGBColor(120, 120, 120),
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

fn mode_color(mode: Mode) -> RGBColor {
    let i = Mode::ALL.iter().position(|m| *m == mode).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

/// Grouped bars: one group per task, one bar per mode, height = mean final
/// accuracy on that task.
pub fn plot_taskwise(table: &ComparisonTable, path: &Path) -> Result<()> {
    let tasks = table.rows.iter().map(|r| r.taskwise_mean.len()).max().unwrap_or(0);
    let modes = table.rows.len().max(1);
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Final accuracy per task", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0f64..tasks.max(1) as f64, 0.0f64..100.0f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(tasks.max(1))
        .x_label_formatter(&|x| format!("task {}", x.floor() as usize + 1))
        .y_desc("accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / modes as f64;
    for (m, row) in table.rows.iter().enumerate() {
        let color = mode_color(row.mode);
        let bars = row.taskwise_mean.iter().enumerate().map(|(j, a)| {
            let x0 = j as f64 + 0.1 + m as f64 * width;
            Rectangle::new([(x0, 0.0), (x0 + width * 0.9, 100.0 * a)], color.filled())
        });
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(row.mode.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
        let errs = row
            .taskwise_mean
            .iter()
            .zip(&row.taskwise_std)
            .enumerate()
            .filter_map(|(j, (a, s))| s.map(|s| (j, *a, s)))
            .map(|(j, a, s)| {
                let x = j as f64 + 0.1 + m as f64 * width + width * 0.45;
                ErrorBar::new_vertical(
                    x,
                    (100.0 * (a - s)).max(0.0),
                    100.0 * a,
                    (100.0 * (a + s)).min(100.0),
                    BLACK.stroke_width(1),
                    6,
                )
            });
        chart.draw_series(errs).map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Student loss components against the optimizer step.
pub fn plot_losses(report: &RunReport, path: &Path) -> Result<()> {
    type Pick = fn(&StepLosses) -> f64;
    let series: [(&str, Pick); 5] = [
        ("L_tri", |l| l.l_tri),
        ("L_FAM", |l| l.l_fam),
        ("L_Cov", |l| l.l_cov),
        ("D_E", |l| l.d_e),
        ("total", |l| l.total),
    ];
    let steps = report.loss_curve.last().map_or(1, |p| p.global_step.max(1));
    let y_max = report
        .loss_curve
        .iter()
        .flat_map(|p| series.iter().map(move |(_, f)| f(&p.losses)))
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.05;
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Student loss components", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0u64..steps, 0.0f64..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("student step")
        .y_desc("loss")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pick)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = report.loss_curve.iter().map(|p| (p.global_step, pick(&p.losses)));
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(1)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Separability ratio of the test embeddings after each task.
pub fn plot_separability(report: &RunReport, path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = report
        .separability
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| ((i + 1) as f64, r)))
        .collect();
    let y_max = pts.iter().map(|p| p.1).fold(1.0f64, f64::max) * 1.1;
    let n = report.separability.len().max(1) as f64;
    let root = SVGBackend::new(path, (700, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Class separability of test embeddings", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(0.5f64..n + 0.5, 0.0f64..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("after task")
        .y_desc("inter / intra distance")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(pts.iter().copied(), PALETTE[1].stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().map(|p| Circle::new(*p, 4, PALETTE[1].filled())))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
