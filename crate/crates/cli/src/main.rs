use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tailrisk_cli::commands::{self, DiagnoseInputs, Diagnostic};
use tailrisk_cli::config::ExperimentConfig;
use tailrisk_cli::CliError;

#[derive(Parser)]
#[command(name = "tailrisk", version, about = "Tail-risk meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-task work; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory (defaults to the configuration's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train and write checkpoint, trace and test metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the benchmark's test tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tail level of the CVaR metric (defaults to the configured one).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Monte Carlo versus kernel VaR error across batch sizes.
    QuantileBench {
        #[command(flatten)]
        common: Common,
        /// Trained model whose losses form the pool (distribution = "model").
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Diagnostics of training traces and the tail-risk bound.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Diagnostic,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference checkpoint for the gap diagnostic.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<Option<ExperimentConfig>, CliError> {
    let cfg = common.config.as_deref().map(ExperimentConfig::load).transpose()?;
    Ok(match (cfg, common.seed) {
        (Some(c), Some(s)) => Some(c.with_seed(s)),
        (c, _) => c,
    })
}

fn require(common: &Common) -> Result<ExperimentConfig, CliError> {
    load(common)?.ok_or_else(|| CliError::Config("--config is required".into()))
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn check_workers(common: &Common) -> Result<(), CliError> {
    if common.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            check_workers(&common)?;
            let cfg = require(&common)?;
            let out = out_dir(&common, Some(&cfg));
            let rec = commands::train(&cfg, common.workers, &out)?;
            if let Some(m) = &rec.metrics {
                println!("average {} worst {} cvar {}", m.average, m.worst, m.cvar);
            }
        }
        Command::Eval { common, checkpoint, alpha } => {
            check_workers(&common)?;
            let cfg = load(&common)?;
            let out = out_dir(&common, cfg.as_ref());
            let rec = commands::eval(&checkpoint, cfg, alpha, common.workers, &out)?;
            if let Some(m) = &rec.metrics {
                println!("average {} worst {} cvar {}", m.average, m.worst, m.cvar);
            }
        }
        Command::QuantileBench { common, checkpoint } => {
            check_workers(&common)?;
            let cfg = require(&common)?;
            let out = out_dir(&common, Some(&cfg));
            commands::quantile_bench(&cfg, checkpoint.as_deref(), common.workers, &out)?;
        }
        Command::Diagnose { common, which, trace, snapshots, checkpoint, reference } => {
            check_workers(&common)?;
            let cfg = require(&common)?;
            let out = out_dir(&common, Some(&cfg));
            let inputs = DiagnoseInputs { trace, snapshots, checkpoint, reference };
            let (summary, _) = commands::diagnose(which, &cfg, &inputs, common.workers, &out)?;
            println!("{}", summary.line());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
