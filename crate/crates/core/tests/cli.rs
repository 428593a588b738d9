use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use contra_cluster::cli::{evaluate_split, features, labelled_subset, RunConfig, METRICS_REPORT, PROTOTYPE_TILES, RESOLVED_CONFIG};
use contra_cluster::data::{write_idx, Dataset, Split};
use contra_cluster::eval::{compute_metrics, knn_predict, MemoryBank, MetricsEntry, Method};
use contra_cluster::pipeline::{load_model, save_checkpoint, TrainConfig, TrainState, FINAL_CHECKPOINT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contra-cluster"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Blurry random strokes, four classes told apart by where the stroke sits.
fn strokes(n: usize, split: Split, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = vec![0.0f32; n * 784];
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 4;
        let (cy, cx) = (7 + 14 * (class / 2), 7 + 14 * (class % 2));
        for _ in 0..40 {
            let y = (cy as i32 + rng.random_range(-4..=4)) as usize;
            let x = (cx as i32 + rng.random_range(-4..=4)) as usize;
            images[i * 784 + y * 28 + x] = 1.0;
        }
        labels.push(class);
    }
    Dataset::new(images, labels, 28, 28, split, 4).unwrap()
}

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn write_config(root: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut cfg = json!({
        "dataset": {
            "name": "strokes",
            "format": "idx",
            "train_images": root.join("train-images"),
            "train_labels": root.join("train-labels"),
            "test_images": root.join("test-images"),
            "test_labels": root.join("test-labels"),
        },
        "train": {"warmup_epochs": 1, "total_epochs": 2, "batch_size": 64},
        "eval": {
            "probe": {"epochs": 5},
            "tsne": {"perplexity": 10.0, "iterations": 300},
        },
        "out_dir": root.join("run"),
    });
    edit(&mut cfg);
    let path = root.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// One trained 1+1 run shared by the tests below.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_idx(&strokes(256, Split::Train, 1), &root.join("train-images"), &root.join("train-labels")).unwrap();
        write_idx(&strokes(100, Split::Test, 2), &root.join("test-images"), &root.join("test-labels")).unwrap();
        let config = write_config(&root, "config.json", |_| {});
        let o = run(&["train", "--config", config.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture { _dir: dir, root, config }
    })
}

#[test]
fn train_writes_checkpoints_and_resolved_config() {
    let f = fixture();
    let run_dir = f.root.join("run");
    assert!(run_dir.join("checkpoints").join(FINAL_CHECKPOINT).is_file());
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join(RESOLVED_CONFIG)).unwrap()).unwrap();
    // defaults are spelled out
    assert_eq!(resolved["train"]["loss"]["temperature"], 0.5);
    assert_eq!(resolved["eval"]["k_neighbors"], 5);
    assert_eq!(resolved["eval"]["label_fraction"], 0.2);
    let reparsed = RunConfig::from_json(&serde_json::to_string(&resolved).unwrap()).unwrap();
    assert_eq!(reparsed.train.warmup_epochs, 1);
}

#[test]
fn evaluate_reports_every_method() {
    let f = fixture();
    let out = f.root.join("eval");
    let o = run(&[
        "evaluate",
        "--config",
        f.config.to_str().unwrap(),
        "--checkpoint",
        f.root.join("run/checkpoints/final.ckpt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "stat,knn,lin",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Vec<MetricsEntry> = serde_json::from_str(&fs::read_to_string(out.join(METRICS_REPORT)).unwrap()).unwrap();
    let methods: Vec<Method> = report.iter().map(|e| e.method).collect();
    assert_eq!(methods, vec![Method::Stat, Method::Knn, Method::Linear]);
    for e in &report {
        assert_eq!(e.split, "test");
        assert_eq!(e.dataset, "strokes");
        assert!((0.0..=1.0).contains(&e.accuracy));
        assert_eq!(e.probe_input.is_some(), e.method == Method::Linear);
    }
}

#[test]
fn train_split_evaluation_equals_direct_calls() {
    let f = fixture();
    let out = f.root.join("eval_train");
    let o = run(&[
        "evaluate",
        "--config",
        f.config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "knn",
        "--split",
        "train",
        "--checkpoint",
        f.root.join("run/checkpoints/final.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Vec<MetricsEntry> = serde_json::from_str(&fs::read_to_string(out.join(METRICS_REPORT)).unwrap()).unwrap();

    let cfg = RunConfig::from_file(&f.config).unwrap();
    let (model, protos, _) = load_model(&f.root.join("run/checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    let train = cfg.dataset.load(Split::Train).unwrap();
    let labelled = labelled_subset(&train, &cfg.eval, cfg.train.seed).unwrap();
    let bank = MemoryBank::new(features(&model, &labelled).unwrap().latent, labelled.labels.clone(), 5).unwrap();
    let pred = knn_predict(&bank, features(&model, &train).unwrap().latent.view()).unwrap();
    let m = compute_metrics(&pred, &train.labels, 4).unwrap();
    assert_eq!(report[0].accuracy, m.accuracy);
    assert_eq!(report[0].precision, m.precision);

    let mut opts = cfg.eval.clone();
    opts.methods = vec![Method::Knn];
    let direct = evaluate_split(&model, protos.as_ref(), &labelled, &train, &opts, cfg.train.seed).unwrap();
    assert_eq!(direct[0].recall, report[0].recall);
}

#[test]
fn visualize_emits_plots_and_prototype_tiles() {
    let f = fixture();
    let out = f.root.join("viz");
    let ckpt = f.root.join("run/checkpoints/final.ckpt");
    let args = [
        "visualize",
        "--config",
        f.config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut svgs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    svgs.sort();
    assert_eq!(svgs, ["tsne_cluster_labels.svg", "tsne_mapped_labels.svg", "tsne_real_labels.svg"]);
    let csv = fs::read_to_string(out.join("tsne_coords.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);

    let (_, protos, _) = load_model(&f.root.join("run/checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    let k = protos.unwrap().k() as u32;
    let tiles = image::open(out.join(PROTOTYPE_TILES)).unwrap();
    assert_eq!((tiles.width(), tiles.height()), (k * 30 - 2, 28));

    let first = fs::read(out.join("tsne_coords.csv")).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(first, fs::read(out.join("tsne_coords.csv")).unwrap(), "same seed, same embedding");
}

#[test]
fn inspect_prints_a_summary() {
    let f = fixture();
    let o = run(&["inspect-checkpoint", f.root.join("run/checkpoints/final.ckpt").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["epoch"], 2);
    assert!(v["k"].as_u64().unwrap() >= 2);
    assert_eq!(code(&run(&["inspect-checkpoint", "/nonexistent.ckpt"])), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let f = fixture();
    let missing = write_config(&f.root, "missing.json", |c| {
        c["dataset"]["train_images"] = json!(f.root.join("nope"));
        c["out_dir"] = json!(f.root.join("never"));
    });
    assert_eq!(code(&run(&["train", "--config", missing.to_str().unwrap()])), 2);
    assert!(!f.root.join("never").exists(), "no partial outputs");

    let cfg = f.config.to_str().unwrap();
    assert_eq!(code(&run(&["evaluate", "--config", cfg, "--methods", "svm"])), 2);
    assert_eq!(code(&run(&["evaluate", "--config", cfg, "--split", "holdout"])), 2);
    assert_eq!(code(&run(&["evaluate", "--config", cfg, "--split", "val"])), 2, "no val split configured");
    assert_eq!(code(&run(&["train", "--config", "/nonexistent.json"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let o = bin().env("CONTRA_CLUSTER_THREADS", "lots").args(["inspect-checkpoint", "x"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let bad = write_config(&f.root, "bad.json", |c| c["train"]["warmup_epochs"] = json!(5));
    assert_eq!(code(&run(&["train", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn stat_without_prototypes_is_a_usage_error() {
    let f = fixture();
    let cfg = TrainConfig::default();
    let ckpt = f.root.join("fresh.ckpt");
    save_checkpoint(&TrainState::new(&cfg).unwrap(), &cfg, &ckpt).unwrap();
    let args = ["evaluate", "--config", f.config.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--out"];
    let out = f.root.join("fresh_eval");
    let mut with_stat = args.to_vec();
    with_stat.extend([out.to_str().unwrap(), "--methods", "stat"]);
    assert_eq!(code(&run(&with_stat)), 2);
    let mut knn_only = args.to_vec();
    knn_only.extend([out.to_str().unwrap(), "--methods", "knn"]);
    assert_eq!(code(&run(&knn_only)), 0);
}

#[test]
fn resume_continues_at_the_recorded_epoch() {
    let f = fixture();
    let out = f.root.join("resumed");
    let resume = f.root.join("run/checkpoints/warmup.ckpt");
    let o = run(&[
        "train",
        "--config",
        f.config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--resume",
        resume.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("checkpoints/loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let (a, _, _) = load_model(&out.join("checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    let (b, _, _) = load_model(&f.root.join("run/checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
}
