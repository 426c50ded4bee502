//! Command line front end for the estimation pipeline.
//!
//! Subcommands mirror the pipeline stages: `run` chains everything, while
//! `direct`, `fit`, and `report` execute one stage against a shared output
//! directory so long jobs can be resumed or re-reported without refitting.
//! `synth` generates a synthetic scenario for testing and calibration work.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fpsae::inference::{FitMode, ModelSpec};
use fpsae::pipeline::{self, RunConfig, RunSummary};
use fpsae::synthetic::{self, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "fpsae",
    version,
    about = "Small-area estimation of family-planning indicators from complex surveys",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: direct estimation, model fitting, reporting.
    Run(StageArgs),
    /// Direct design-based estimation only; writes per-combination cell tables.
    Direct(StageArgs),
    /// Fit and select models from previously written cell tables.
    Fit(StageArgs),
    /// Write report tables from previously fitted artifacts.
    Report(StageArgs),
    /// Generate a synthetic scenario: microdata, geography, population, truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the configured RNG seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Override the fitting mode: 'full' or 'empirical_bayes' (alias 'eb').
    #[arg(long, value_name = "MODE", value_parser = parse_mode)]
    mode: Option<FitMode>,
    /// Override the model subset, comma-separated ids like '1a,2b,4a'.
    #[arg(long, value_name = "IDS", value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario TOML; omitted, a built-in 37-area demonstration scenario
    /// with 13 surveys over 1990-2018 is used.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Directory the scenario files are written into.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<FitMode, String> {
    match s {
        "full" => Ok(FitMode::Full),
        "empirical_bayes" | "eb" => Ok(FitMode::EmpiricalBayes),
        other => Err(format!(
            "unknown mode '{other}' (expected 'full' or 'empirical_bayes')"
        )),
    }
}

fn mode_name(mode: FitMode) -> &'static str {
    match mode {
        FitMode::Full => "full",
        FitMode::EmpiricalBayes => "empirical_bayes",
    }
}

/// Loads the configuration file and applies command line overrides.
fn configure(args: &StageArgs) -> anyhow::Result<RunConfig> {
    let mut config = pipeline::load_config(&args.config)
        .with_context(|| format!("loading configuration {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(ids) = &args.models {
        let mut models = ids
            .iter()
            .map(|s| ModelSpec::parse(s))
            .collect::<fpsae::Result<Vec<_>>>()
            .context("parsing --models override")?;
        models.sort();
        models.dedup();
        anyhow::ensure!(!models.is_empty(), "--models override names no models");
        config.models = models;
    }
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    Ok(config)
}

fn print_summary(summary: &RunSummary) {
    println!(
        "run complete: {} mode, seed {}, {} areas, {} records from {} survey(s)",
        mode_name(summary.mode),
        summary.seed,
        summary.n_areas,
        summary.n_records,
        summary.surveys.len()
    );
    println!(
        "grid {}..={} (data through {}, projection horizon {})",
        summary.first_year, summary.projection_horizon, summary.last_year,
        summary.projection_horizon
    );
    for combo in &summary.combos {
        let agreement = if combo.criteria_agree { "criteria agree" } else { "criteria disagree" };
        println!(
            "  {}/{}: winner {} (WAIC {:.2}, {}), {}/{} usable cells -> {}",
            combo.indicator,
            combo.subgroup,
            combo.winner,
            combo.winner_waic,
            agreement,
            combo.n_ok_cells,
            combo.n_cells,
            combo.directory
        );
        for warning in &combo.warnings {
            eprintln!("warning [{}/{}]: {warning}", combo.indicator, combo.subgroup);
        }
    }
    if summary.aggregation != "done" {
        eprintln!("note: {}", summary.aggregation);
    }
}

fn run_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let config: ScenarioConfig = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scenario {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing scenario {}", path.display()))?
        }
        None => synthetic::demo_scenario(),
    };
    let arts = synthetic::generate_scenario(&config, &args.out, args.seed)?;
    println!(
        "scenario written to {}: {} areas, years {}..={}, {} survey(s), {} women",
        args.out.display(),
        config.n_areas,
        config.first_year,
        config.last_year,
        config.plans.len(),
        arts.dataset.records.len()
    );
    for path in [
        &arts.microdata_path,
        &arts.roster_path,
        &arts.edges_path,
        &arts.population_path,
        &arts.truth_path,
    ] {
        println!("  {}", path.display());
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => {
            let config = configure(args)?;
            let summary = pipeline::run(&config)?;
            print_summary(&summary);
        }
        Command::Direct(args) => {
            let config = configure(args)?;
            pipeline::run_direct(&config)?;
            println!("direct estimation complete -> {}", config.output.display());
        }
        Command::Fit(args) => {
            let config = configure(args)?;
            pipeline::run_fit(&config)?;
            println!("model fitting complete -> {}", config.output.display());
        }
        Command::Report(args) => {
            let config = configure(args)?;
            pipeline::run_report(&config)?;
            println!("reporting complete -> {}", config.output.display());
        }
        Command::Synth(args) => run_synth(args)?,
    }
    Ok(())
}
