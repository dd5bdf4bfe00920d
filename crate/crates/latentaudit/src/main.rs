use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latentaudit::config::PipelineConfig;
use latentaudit::error::{AuditError, Result};
use latentaudit::evaluate::EvaluationSummary;
use latentaudit::pipeline::{Outcome, Pipeline, RunLock, Stage};

/// Environment variable naming the compute device.
const DEVICE_ENV: &str = "LATENTAUDIT_DEVICE";

#[derive(Debug, Parser)]
#[command(name = "latentaudit", version, about = "Audit what a classifier reads into a protected attribute by walking a GAN latent space")]
struct Cli {
    /// Pipeline configuration (JSON). Without it every setting takes its default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides the configuration's `run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Global seed; overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rebuild stages even when their outputs are current, and accept a
    /// changed configuration for stages that already ran.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic cohort (records the manifest for external data).
    Synth,
    /// Load the manifest, keep frontal views, derive the task and cache images.
    Ingest,
    /// Train the unconditional generator.
    TrainGan,
    /// Train the attribute classifier.
    TrainClf,
    /// Project train images into the latent space.
    Project,
    /// Fit the separating direction on consistent projections.
    FitDirection,
    /// Walk projected latents along the direction and render the montage.
    Traverse,
    /// Score traversals against a random control and write the summary.
    Evaluate,
    /// Run every stage in order.
    RunAll {
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<String>,
    },
}

fn check_device() -> Result<()> {
    match std::env::var(DEVICE_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") => Ok(()),
        Ok(v) => Err(AuditError::validation(format!("{DEVICE_ENV}={v:?} is not available; this build supports \"cpu\""))),
        Err(e) => Err(AuditError::validation(format!("{DEVICE_ENV}: {e}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    check_device()?;
    let (mut config, base_dir) = match &cli.config {
        Some(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (PipelineConfig::load(path)?, base)
        }
        None => (PipelineConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let run_dir = cli.run_dir.clone().unwrap_or_else(|| {
        if config.run_dir.is_absolute() {
            config.run_dir.clone()
        } else {
            base_dir.join(&config.run_dir)
        }
    });
    let until = match &cli.command {
        Command::RunAll { stage } => stage.as_deref().map(Stage::parse).transpose()?,
        _ => None,
    };
    let pipeline = Pipeline::new(config, run_dir.clone(), cli.force, base_dir)?;
    let _lock = RunLock::acquire(&run_dir)?;
    let stages = match &cli.command {
        Command::RunAll { .. } => pipeline.run_all(until)?,
        single => {
            let stage = match single {
                Command::Synth => Stage::Synth,
                Command::Ingest => Stage::Ingest,
                Command::TrainGan => Stage::TrainGan,
                Command::TrainClf => Stage::TrainClf,
                Command::Project => Stage::Project,
                Command::FitDirection => Stage::FitDirection,
                Command::Traverse => Stage::Traverse,
                Command::Evaluate => Stage::Evaluate,
                Command::RunAll { .. } => unreachable!("handled above"),
            };
            vec![(stage, pipeline.run_stage(stage)?)]
        }
    };
    for (stage, outcome) in &stages {
        let word = match outcome {
            Outcome::Completed => "completed",
            Outcome::Skipped => "skipped (up to date)",
        };
        println!("{stage}: {word}");
    }
    if stages.iter().any(|(s, _)| *s == Stage::Evaluate) {
        print_summary(&EvaluationSummary::read(&pipeline.stage_dir(Stage::Evaluate).join("summary.json"))?);
    }
    Ok(())
}

fn print_summary(s: &EvaluationSummary) {
    println!("task {}: classifier val AUROC {:.3}, SVM train accuracy {:.3}", s.task_id, s.classifier_val_auroc, s.svm_train_accuracy);
    println!("retained {}/{} projections ({:.1}%)", s.n_retained, s.n_projected, 100.0 * s.retained_fraction);
    println!("{:<10} {:>6} {:>8} {:>10} {:>9} {:>10}", "direction", "seqs", "flip", "flip@conf", "spearman", "alignment");
    for (name, m) in [("svm", &s.direction), ("random", &s.random_control)] {
        let align = m.pixel_alignment.map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{name:<10} {:>6} {:>8.3} {:>10.3} {:>9.3} {:>10}",
            m.sequences, m.flip_rate, m.confident_flip_rate, m.mean_spearman, align
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors are validation errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
