use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use replaykd::eval::{emit_comparison, emit_report, run_suite, RunReport, RESULTS_FILE};
use replaykd::trainer::{prepare_stream, Mode, RunConfig, Trainer, REPORT_DIR};

#[derive(Parser)]
#[command(name = "replaykd", version, about = "Class-incremental metric learning with generative distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a run described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint inside the run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the accuracy matrix and A_K of a finished run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run every config matching a glob for seeds 0..N and compare modes.
    Suite {
        #[arg(long)]
        configs: String,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Directory for the suite's runs and comparison report.
        #[arg(long, default_value = "runs/suite")]
        out: PathBuf,
    },
    /// Combine finished runs into one comparison report.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, resume, mode, seed, out } => train(&config, resume, mode, seed, out),
        Command::Evaluate { run } => evaluate(&run),
        Command::Suite { configs, seeds, out } => suite(&configs, seeds, &out),
        Command::Report { runs, out } => report(&runs, &out),
    }
}

fn train(
    config_path: &Path,
    resume: Option<PathBuf>,
    mode: Option<Mode>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(m) = mode {
        config.mode = m;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.output_dir = o;
    }
    let mut trainer = match resume {
        Some(ckpt) => {
            let stream = prepare_stream(&config)?;
            Trainer::resume(stream, &config.output_dir, &ckpt)
                .with_context(|| format!("resuming from {}", ckpt.display()))?
        }
        None => Trainer::from_config(config)?,
    };
    let report = trainer.run()?;
    println!("A_K = {:.2}%  ({})", 100.0 * report.a_k, trainer.run_dir().display());
    Ok(())
}

fn load_results(run: &Path) -> Result<RunReport> {
    let path = run.join(REPORT_DIR).join(RESULTS_FILE);
    RunReport::load(&path).with_context(|| format!("reading {}", path.display()))
}

fn evaluate(run: &Path) -> Result<()> {
    let report = load_results(run)?;
    let recomputed = report.recompute_a_k()?;
    println!("dataset {}  mode {}  seed {}", report.dataset, report.mode, report.seed);
    for (i, row) in report.matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|a| format!("{:6.2}", 100.0 * a)).collect();
        println!("after task {}: {}", i + 1, cells.join(" "));
    }
    println!("A_K = {:.2}%", 100.0 * recomputed);
    if recomputed != report.a_k {
        bail!("stored A_K {} differs from recomputed {}", report.a_k, recomputed);
    }
    Ok(())
}

fn suite(pattern: &str, seeds: u64, out: &Path) -> Result<()> {
    let mut configs = Vec::new();
    for entry in glob::glob(pattern).context("invalid glob")? {
        let path = entry?;
        let base = RunConfig::load(&path)?;
        for seed in 0..seeds {
            let mut c = base.clone();
            c.seed = seed;
            c.output_dir = out.join(format!("{}_seed{seed}", c.mode));
            configs.push(c);
        }
    }
    if configs.is_empty() {
        bail!("no configs match `{pattern}`");
    }
    let outcome = run_suite(&configs)?;
    emit_comparison(&outcome.reports, &outcome.failures, &out.join(REPORT_DIR))?;
    print!("{}", outcome.table.to_markdown());
    Ok(())
}

fn report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let reports = runs.iter().map(|r| load_results(r)).collect::<Result<Vec<_>>>()?;
    if let [single] = reports.as_slice() {
        emit_report(single, out)?;
        println!("A_K = {:.2}%", 100.0 * single.a_k);
        return Ok(());
    }
    let table = emit_comparison(&reports, &[], out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

