use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmpath::config::{Overrides, PipelineConfig};
use kmpath::pipeline::{run_pipeline, run_stage, PipelineError, Stage};

/// Learn a 1-D SDE from data and compute its most probable transition path.
#[derive(Parser)]
#[command(name = "kmpath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write pairs.csv
    Simulate(Common),
    /// Bin increments into conditional moments (bins.csv)
    Estimate(Common),
    /// Sparse regression of drift and diffusion (model.json, cv_scan.csv)
    Fit(Common),
    /// Forward and backward solves of the learned model
    #[command(name = "solve-fp")]
    SolveFp(Common),
    /// Most probable path from the solved fields (path.csv)
    Path(Common),
    /// All stages in order, plus manifest.json
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the simulation seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); results do not depend on it
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Refuse to draw missing seeds from entropy
    #[arg(long)]
    strict_repro: bool,
}

fn run(stage: Option<Stage>, c: &Common) -> Result<(), PipelineError> {
    if c.threads > 0 {
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(c.threads).build_global();
    }
    let ov = Overrides { seed: c.seed, output_dir: c.output_dir.clone(), strict_repro: c.strict_repro };
    let cfg = PipelineConfig::load(&c.config).and_then(|cfg| cfg.resolve(&ov)).map_err(PipelineError::Config)?;
    match stage {
        Some(s) => run_stage(s, &cfg),
        None => {
            let m = run_pipeline(&cfg)?;
            log::info!("wrote {} artifacts to {}", m.files.len(), cfg.output_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::Simulate(c) => (Some(Stage::Simulate), c),
        Command::Estimate(c) => (Some(Stage::Estimate), c),
        Command::Fit(c) => (Some(Stage::Fit), c),
        Command::SolveFp(c) => (Some(Stage::SolveFp), c),
        Command::Path(c) => (Some(Stage::Path), c),
        Command::Pipeline(c) => (None, c),
    };
    match run(stage, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
