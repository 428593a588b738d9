//! A short two-phase run on synthetic shapes: warmup, prototype discovery,
//! conditional fine-tuning and checkpoints.

mod common;

use contra_cluster::data::Split;
use contra_cluster::pipeline::{run_training, TrainConfig};

fn main() -> contra_cluster::Result<()> {
    let out = tempfile::tempdir()?;
    let data = common::shapes(256, 0, Split::Train);
    let cfg = TrainConfig {
        warmup_epochs: 2,
        total_epochs: 4,
        batch_size: 64,
        checkpoint_dir: out.path().to_path_buf(),
        ..TrainConfig::default()
    };
    let art = run_training(&cfg, &data, None)?;
    for e in &art.log {
        println!(
            "epoch {} [{}] lr {:.3}  contrastive {:.4}  recon {:.4}",
            e.epoch,
            e.phase.as_str(),
            e.lr,
            e.mean_contrastive,
            e.mean_recon
        );
    }
    println!("elbow picked k = {}", art.prototypes.k());
    for entry in std::fs::read_dir(out.path())? {
        println!("wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
