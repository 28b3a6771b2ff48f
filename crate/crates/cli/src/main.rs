mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use pfgn::pointnet::ModelKind;
use pfgn::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

/// Point-cloud flow-field surrogates: data generation, training, sampling and evaluation.
#[derive(Debug, Parser)]
#[command(name = "pfgn", version)]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the seed of the command.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it to the output directory.
    GenData,
    /// Train one model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Draw field realizations for selected geometries.
    Sample(SampleArgs),
    /// Score a checkpoint on a dataset split.
    Eval(ModelArgs),
    /// Score a checkpoint on clouds with a fraction of their points removed.
    Robust(RobustArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelChoice {
    Fm,
    Ddpm,
    Baseline,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Fm => ModelKind::FlowMatching,
            ModelChoice::Ddpm => ModelKind::Diffusion,
            ModelChoice::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,

    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,

    /// Stops after this many optimizer steps.
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Checkpoint written by train.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,

    /// Dataset directory written by gen-data.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,

    /// Expected model kind; the checkpoint must match.
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,

    /// One of train, val, test.
    #[arg(long)]
    split: Option<String>,

    /// Realizations per geometry.
    #[arg(long, value_name = "S")]
    samples: Option<usize>,

    /// Sampler steps. Flow matching uses any positive count; diffusion must
    /// match the schedule stored in the checkpoint.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: ModelArgs,

    /// Geometry ids; defaults to the first geometry of the split.
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    geometry: Vec<usize>,
}

#[derive(Debug, Args)]
struct RobustArgs {
    #[command(flatten)]
    common: ModelArgs,

    /// Comma-separated point-drop fractions.
    #[arg(long, value_delimiter = ',', value_name = "F")]
    fractions: Vec<f64>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.checkpoint {
            cfg.paths.checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.dataset {
            cfg.paths.dataset = Some(p.clone());
        }
        if let Some(s) = &self.split {
            cfg.eval.split = s.clone();
        }
        if let Some(s) = self.samples {
            cfg.eval.samples = s;
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("PFGN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PFGN_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    match cli.command {
        Command::GenData => {
            if let Some(seed) = cli.seed {
                cfg.data_seed = seed;
            }
            cfg.validate()?;
            commands::gen_data(&cfg)
        }
        Command::Train(args) => {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(m) = args.model {
                cfg.train.model = m.into();
            }
            if let Some(p) = args.dataset {
                cfg.paths.dataset = Some(p);
            }
            if let Some(n) = args.max_steps {
                cfg.train.max_steps = Some(n);
            }
            cfg.validate()?;
            commands::train(&cfg)
        }
        Command::Sample(args) => {
            let opts = prepare(&mut cfg, cli.seed, &args.common)?;
            commands::sample(&cfg, &opts, &args.geometry)
        }
        Command::Eval(args) => {
            let opts = prepare(&mut cfg, cli.seed, &args)?;
            commands::eval(&cfg, &opts)
        }
        Command::Robust(args) => {
            if !args.fractions.is_empty() {
                cfg.eval.fractions = args.fractions.clone();
            }
            let opts = prepare(&mut cfg, cli.seed, &args.common)?;
            commands::robust(&cfg, &opts)
        }
    }
}

fn prepare(cfg: &mut RunConfig, seed: Option<u64>, args: &ModelArgs) -> Result<commands::SamplerOptions> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    args.apply(cfg);
    cfg.validate()?;
    Ok(commands::SamplerOptions { expected: args.model.map(Into::into), steps: args.steps })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error [{}]: {e}", category.as_str());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
