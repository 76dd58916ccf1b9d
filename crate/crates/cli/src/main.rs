use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use devdup_core::pipeline::{Manifest, Pipeline, PipelineError, RunConfig, Stage, StageSummary};
use devdup_core::StudyMonth;

/// Find and merge duplicate devices in multi-vendor location data.
#[derive(Parser, Debug)]
#[command(name = "devdup", version)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Never changes outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of top visited cells in the dedup key.
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Study month, YYYY-MM.
    #[arg(long, global = true)]
    month: Option<StudyMonth>,
    /// Input sightings file; repeat for several. Replaces configured inputs.
    #[arg(long = "input", short, global = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic vendor files and ground truth.
    Synth,
    /// Parse, localize and filter input sightings.
    Ingest,
    /// Impute each device's home cell.
    ImputeHome,
    /// Rank each device's visited cells.
    Profile,
    /// Group devices by home and top-N cells and merge duplicates.
    Dedup,
    /// Check hourly co-location of flagged pairs.
    Validate,
    /// Summarize the N sweep and score against ground truth if present.
    Report,
    /// Run every stage in order.
    Run,
    /// Print per-stage device accounting from the manifest.
    Manifest,
}

fn load_config(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if opts.workers.is_some() {
        cfg.workers = opts.workers;
    }
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    if let Some(n) = opts.top_n {
        cfg.top_n = n;
    }
    if let Some(w) = &opts.workdir {
        cfg.workdir = w.clone();
    }
    if let Some(m) = opts.month {
        cfg.study_month = m;
    }
    if !opts.inputs.is_empty() {
        cfg.inputs = opts.inputs.clone();
    }
    Ok(cfg)
}

fn print_summary(s: &StageSummary) {
    let dropped: Vec<String> = s
        .devices_dropped
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!(
        "{:<12} rows {:>10} -> {:<10} devices {:>8} -> {:<8} dropped [{}]",
        s.stage,
        s.rows_in,
        s.rows_out,
        s.devices_in,
        s.devices_out,
        dropped.join(", ")
    );
}

fn show_manifest(pipeline: &Pipeline) -> Result<()> {
    let path = pipeline.manifest_path();
    let Some(m) = Manifest::read(&path)? else {
        bail!(PipelineError::MissingPrerequisite {
            stage: "run",
            path: path.display().to_string(),
        });
    };
    println!("config {}", m.config_hash);
    for input in &m.inputs {
        println!(
            "input  {} {} bytes sha256 {}",
            input.path, input.bytes, input.sha256
        );
    }
    for stage in Stage::ALL {
        if let Some(s) = m.stages.get(stage.name()) {
            print_summary(s);
        }
    }
    let bad = m.unbalanced();
    if !bad.is_empty() {
        bail!("device accounting does not balance for: {}", bad.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.opts)?;
    let pipeline = Pipeline::new(cfg)?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::ImputeHome => Stage::ImputeHome,
        Command::Profile => Stage::Profile,
        Command::Dedup => Stage::Dedup,
        Command::Validate => Stage::Validate,
        Command::Report => Stage::Report,
        Command::Run => {
            for s in pipeline.run_all().context("full run failed")? {
                print_summary(&s);
            }
            return Ok(());
        }
        Command::Manifest => return show_manifest(&pipeline),
    };
    let summary = pipeline
        .run_stage(stage)
        .with_context(|| format!("stage '{stage}' failed"))?;
    print_summary(&summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<PipelineError>())
                .map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
