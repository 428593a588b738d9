//! Trains a tiny run, then reloads the final checkpoint and summarizes it.
//! With an argument, inspects that checkpoint instead.

mod common;

use std::path::PathBuf;

use contra_cluster::cli::cmd_inspect;
use contra_cluster::data::Split;
use contra_cluster::pipeline::{load_model, run_training, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let cfg = TrainConfig {
                warmup_epochs: 1,
                total_epochs: 2,
                batch_size: 64,
                checkpoint_dir: tmp.path().to_path_buf(),
                ..TrainConfig::default()
            };
            run_training(&cfg, &common::shapes(128, 0, Split::Train), None)?.checkpoint
        }
    };
    println!("{}", serde_json::to_string_pretty(&cmd_inspect(&path)?)?);

    let (model, protos, cfg) = load_model(&path)?;
    println!(
        "conditioning on {:?} clusters, prototypes {}, trained with seed {}",
        model.cluster_count(),
        protos.map_or("absent".into(), |p| format!("{}×{}", p.dim(), p.k())),
        cfg.seed
    );
    Ok(())
}
