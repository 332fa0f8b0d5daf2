use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffroad::config::{Paths, PipelineConfig, Stage};
use diffroad::error::{AppError, Result};
use diffroad::pipeline::{Logger, Pipeline};

#[derive(Parser)]
#[command(name = "diffroad", version, about = "Conditional diffusion generator for road scenarios")]
struct Cli {
    /// Pipeline config file (TOML); defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(short, long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Place every artifact path under this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Never contact the map service; cached responses only.
    #[arg(long, global = true)]
    offline: bool,

    /// Override a config key, e.g. `--set training.max_steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Suppress log records.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the training dataset from GeoJSON, Overpass or synthetic data.
    Ingest {
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
    /// Train the denoiser.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Generate a scenario library from the final checkpoint.
    Sample {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        no_freeu: bool,
    },
    /// Add elevation profiles to the library.
    Terrain,
    /// Score and filter the library.
    Evaluate {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        s_min: Option<f64>,
    },
    /// Compare the library with the training set.
    Metrics,
    /// Write accepted scenarios as OpenDRIVE files.
    Export,
    /// Run the stages listed in the config.
    Pipeline,
}

fn load(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
            .parse()?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths = Paths::under(out);
    }
    if let Some(dir) = std::env::var_os("DIFFROAD_CACHE") {
        cfg.ingest.cache_dir = Some(dir.into());
    }
    let mut sets = cli.overrides.clone();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push(format!("{key}={v}"));
        }
    };
    flag("seed", cli.seed.map(|v| v.to_string()));
    if cli.offline {
        flag("ingest.offline", Some("true".into()));
    }
    let stage = match &cli.command {
        Command::Ingest { geojson } => {
            flag("paths.geojson", geojson.as_ref().map(|p| format!("{:?}", p.display().to_string())));
            Some(Stage::Ingest)
        }
        Command::Train { steps, lr, batch_size, omega } => {
            flag("training.max_steps", steps.map(|v| v.to_string()));
            flag("training.learning_rate", lr.map(|v| format!("{v:?}")));
            flag("training.batch_size", batch_size.map(|v| v.to_string()));
            flag("training.omega", omega.map(|v| format!("{v:?}")));
            Some(Stage::Train)
        }
        Command::Sample { count, stride, no_freeu } => {
            flag("sampler.count", count.map(|v| v.to_string()));
            flag("sampler.stride", stride.map(|v| v.to_string()));
            if *no_freeu {
                flag("sampler.use_freeu", Some("false".into()));
            }
            Some(Stage::Sample)
        }
        Command::Terrain => Some(Stage::Terrain),
        Command::Evaluate { lambda, s_min } => {
            flag("eval.lambda", lambda.map(|v| format!("{v:?}")));
            flag("eval.s_min", s_min.map(|v| format!("{v:?}")));
            Some(Stage::Evaluate)
        }
        Command::Metrics => Some(Stage::Metrics),
        Command::Export => Some(Stage::Export),
        Command::Pipeline => None,
    };
    let mut cfg = cfg.with_overrides(&sets)?;
    if let Some(s) = stage {
        cfg.stages = vec![s];
    }
    Ok(cfg.resolved())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli)?;
    if cli.print_config {
        cfg.validate()?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| AppError::Config(e.to_string()))?;
    }
    let mut pipeline = Pipeline::new(cfg, Logger::new(cli.quiet))?;
    if !cli.quiet {
        eprintln!("# effective config (hash {})", pipeline.config_hash());
        eprint!("{}", pipeline.config().to_toml());
    }
    pipeline.run()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
