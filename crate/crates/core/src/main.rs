use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contra_cluster::cli::{self, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "contra-cluster", version, about = "Contrastive clustering of grayscale images")]
struct Opts {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods: stat, knn, lin.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated splits: train, val, test.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train both phases and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write a metrics report for a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the run's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export t-SNE plots and prototype reconstructions.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print a checkpoint summary as JSON.
    InspectCheckpoint { checkpoint: PathBuf },
}

fn usage(e: contra_cluster::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let overrides = Overrides {
        seed: c.seed,
        out_dir: c.out.clone(),
        methods: c.methods.as_deref().map(cli::parse_methods).transpose().map_err(usage)?,
        splits: c.split.as_deref().map(cli::parse_splits).transpose().map_err(usage)?,
    };
    Ok(RunConfig::from_file(&c.config)?.resolve(&overrides))
}

fn run(opts: Opts) -> Result<(), CliError> {
    match opts.command {
        Command::Train { common, resume } => {
            let cfg = load(&common)?;
            let art = cli::cmd_train(&cfg, resume.as_deref())?;
            println!("k = {}, checkpoint {}", art.prototypes.k(), art.checkpoint.display());
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.final_checkpoint());
            let report = cli::cmd_evaluate(&cfg, &ckpt)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(contra_cluster::Error::from)?);
        }
        Command::Visualize { common, checkpoint } => {
            let cfg = load(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.final_checkpoint());
            let v = cli::cmd_visualize(&cfg, &ckpt)?;
            println!("wrote {} and {}", v.plots.csv.display(), v.tiles.display());
        }
        Command::InspectCheckpoint { checkpoint } => {
            let summary = cli::cmd_inspect(&checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(contra_cluster::Error::from)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let opts = match Opts::try_parse() {
        Ok(o) => o,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(n) = std::env::var("CONTRA_CLUSTER_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            _ => {
                eprintln!("error: CONTRA_CLUSTER_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
