use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyperfield::pipeline::{PipelineConfig, Runner, Stage, StageStatus};
use hyperfield::{Error, Result};

/// Plot-level wheat yield estimation from hyperspectral field imagery.
///
/// Exit codes: 0 success, 2 configuration error, 3 missing upstream stage,
/// 4 data error, 5 training divergence, 6 I/O error.
#[derive(Parser)]
#[command(name = "hyperfield", version)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults run the synthetic scene.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rerun stages even when their manifests are current.
    #[arg(long, global = true)]
    stage_force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Radiance to reflectance via the reference panel, then band masking.
    Calibrate,
    /// NDPSI thresholding, morphology and plot boxes.
    Segment,
    /// Plot-ID assignment from the box grid and the plot map.
    Gridmap,
    /// Endmember extraction and labelling.
    Endmembers,
    /// Fully constrained unmixing and the spike-and-leaf mask.
    Unmix,
    /// Sub-plot windows, yield allocation and features.
    Dataset,
    /// Split the dataset and train the regressor.
    Train,
    /// Metrics on the held-out plots.
    Evaluate,
    /// Metrics tables, scatter data, middle-third classes and colormaps.
    Report,
    /// Generate the synthetic scene.
    Synth,
    /// Every stage in order.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let runner = Runner::new(&cfg, &cli.out, cli.stage_force);
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::RunAll => {
            for (s, status) in runner.run_all()? {
                report(s, status);
            }
            return Ok(());
        }
        Command::Calibrate => Stage::Calibrate,
        Command::Segment => Stage::Segment,
        Command::Gridmap => Stage::Gridmap,
        Command::Endmembers => Stage::Endmembers,
        Command::Unmix => Stage::Unmix,
        Command::Dataset => Stage::Dataset,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::Synth => Stage::Synth,
    };
    let status = runner.run(stage)?;
    report(stage, status);
    Ok(())
}

fn report(stage: Stage, status: StageStatus) {
    let s = match status {
        StageStatus::Ran => "done",
        StageStatus::Skipped => "up to date",
    };
    eprintln!("{}: {s}", stage.name());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYPERFIELD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
