//! The train, evaluate and visualize commands driven from a JSON config, as
//! the `contra-cluster` binary does.

mod common;

use contra_cluster::cli::{cmd_evaluate, cmd_train, cmd_visualize, Overrides, RunConfig};
use contra_cluster::data::{write_idx, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    write_idx(&common::shapes(192, 0, Split::Train), &d.join("train-img"), &d.join("train-lbl"))?;
    write_idx(&common::shapes(96, 1, Split::Test), &d.join("test-img"), &d.join("test-lbl"))?;

    let json = serde_json::json!({
        "dataset": {
            "name": "shapes",
            "format": "idx",
            "train_images": d.join("train-img"),
            "train_labels": d.join("train-lbl"),
            "test_images": d.join("test-img"),
            "test_labels": d.join("test-lbl"),
        },
        "train": { "warmup_epochs": 1, "total_epochs": 2, "batch_size": 64 },
        "eval": { "probe": { "epochs": 20 }, "tsne": { "iterations": 300, "perplexity": 10.0 } },
        "out_dir": d.join("run"),
    });
    let cfg = RunConfig::from_json(&json.to_string())?.resolve(&Overrides::default());

    let art = cmd_train(&cfg, None)?;
    println!("trained, k = {}", art.prototypes.k());
    for m in cmd_evaluate(&cfg, &art.checkpoint)? {
        println!("{} {:<4} accuracy {:.3}", m.split, m.method.as_str(), m.accuracy);
    }
    let v = cmd_visualize(&cfg, &art.checkpoint)?;
    println!("plots in {}, prototype tiles in {}", v.plots.csv.parent().unwrap().display(), v.tiles.display());
    Ok(())
}
