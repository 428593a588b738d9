//! Run configuration and the commands behind the `contra-cluster` binary.
//!
//! A run is described by one JSON file. Missing fields take their defaults,
//! a few flags override it, and the fully resolved config is written next to
//! the outputs of every command.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::PrototypeMatrix;
use crate::data::{load_idx, load_medmnist_npz, subset, Dataset, Split};
use crate::eval::{
    compute_metrics, export_plots, fit_cluster_label_map, knn_predict, linear_probe, pixel_variance,
    predict_stat, prototype_reconstructions, tsne_embed, write_tiles_png, MemoryBank, MetricsEntry, Method,
    PlotFiles, ProbeConfig, ProbeInput, TsneConfig,
};
use crate::model::{Model, IMAGE_SIDE};
use crate::pipeline::{load_checkpoint, load_model, run_training, to_array, RunArtifacts, FINAL_CHECKPOINT};
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const METRICS_REPORT: &str = "metrics.json";
pub const PROTOTYPE_TILES: &str = "prototypes.png";
const CHECKPOINT_SUBDIR: &str = "checkpoints";

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or inputs; nothing was run.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum DatasetSource {
    /// MNIST-style IDX pairs. The val split is optional.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_labels: Option<PathBuf>,
    },
    /// MedMNIST `.npz` archive holding all splits.
    Npz { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Name reported in the metrics.
    #[serde(default = "default_dataset_name")]
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
    /// Keep only the first n training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    /// Keep only the first n samples of evaluated splits.
    #[serde(default)]
    pub eval_limit: Option<usize>,
}

fn default_dataset_name() -> String {
    "dataset".into()
}

impl DatasetConfig {
    fn paths(&self, split: Split) -> Vec<&Path> {
        match (&self.source, split) {
            (DatasetSource::Npz { path }, _) => vec![path.as_path()],
            (DatasetSource::Idx { train_images, train_labels, .. }, Split::Train) => vec![train_images, train_labels],
            (DatasetSource::Idx { test_images, test_labels, .. }, Split::Test) => vec![test_images, test_labels],
            (DatasetSource::Idx { val_images, val_labels, .. }, Split::Val) => {
                val_images.iter().chain(val_labels.iter()).map(PathBuf::as_path).collect()
            }
        }
    }

    /// Checks that every file the split needs exists.
    pub fn check(&self, split: Split) -> std::result::Result<(), CliError> {
        let paths = self.paths(split);
        if paths.is_empty() || (matches!(self.source, DatasetSource::Idx { .. }) && paths.len() != 2) {
            return Err(usage(format!("dataset has no {split} split configured")));
        }
        match paths.iter().find(|p| !p.is_file()) {
            Some(p) => Err(usage(format!("dataset file {} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn load(&self, split: Split) -> Result<Dataset> {
        let ds = match &self.source {
            DatasetSource::Npz { path } => load_medmnist_npz(path, split)?,
            DatasetSource::Idx { .. } => {
                let p = self.paths(split);
                if p.len() != 2 {
                    return Err(Error::Config(format!("dataset has no {split} split configured")));
                }
                load_idx(p[0], p[1], split)?
            }
        };
        let limit = if split == Split::Train { self.train_limit } else { self.eval_limit };
        Ok(match limit {
            Some(n) => ds.head(n),
            None => ds,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub methods: Vec<Method>,
    pub splits: Vec<Split>,
    /// Share of the training set whose labels the evaluators may read.
    pub label_fraction: f64,
    pub k_neighbors: usize,
    pub probe: ProbeConfig,
    pub tsne: TsneConfig,
    /// Upper bound on the points fed to t-SNE (the first n of the split).
    pub tsne_max_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Stat, Method::Knn, Method::Linear],
            splits: vec![Split::Test],
            label_fraction: 0.2,
            k_neighbors: 5,
            probe: ProbeConfig::default(),
            tsne: TsneConfig::default(),
            tsne_max_points: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: crate::pipeline::TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub splits: Option<Vec<Split>>,
}

/// Parses a comma-separated method list such as `stat,knn,lin`.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|m| !m.trim().is_empty()).map(str::parse).collect()
}

pub fn parse_splits(s: &str) -> Result<Vec<Split>> {
    s.split(',').filter(|m| !m.trim().is_empty()).map(|m| m.trim().parse()).collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> std::result::Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies overrides and places checkpoints under `out_dir/checkpoints`.
    pub fn resolve(mut self, o: &Overrides) -> Self {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(out) = &o.out_dir {
            self.out_dir = out.clone();
        }
        if let Some(m) = &o.methods {
            self.eval.methods = m.clone();
        }
        if let Some(s) = &o.splits {
            self.eval.splits = s.clone();
        }
        self.train.checkpoint_dir = self.out_dir.join(CHECKPOINT_SUBDIR);
        self
    }

    pub fn validate(&self) -> std::result::Result<(), CliError> {
        self.train.validate().map_err(usage)?;
        let e = &self.eval;
        if e.methods.is_empty() {
            return Err(usage("no evaluation method selected"));
        }
        if e.splits.is_empty() {
            return Err(usage("no evaluation split selected"));
        }
        if !(e.label_fraction > 0.0 && e.label_fraction <= 1.0) {
            return Err(usage(format!("label_fraction {} not in (0,1]", e.label_fraction)));
        }
        if e.k_neighbors == 0 {
            return Err(usage("k_neighbors must be positive"));
        }
        if e.tsne_max_points == 0 {
            return Err(usage("tsne_max_points must be positive"));
        }
        self.dataset.check(Split::Train)
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.train.checkpoint_dir.join(FINAL_CHECKPOINT)
    }

    pub fn write_resolved(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(RESOLVED_CONFIG);
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> std::result::Result<RunArtifacts, CliError> {
    cfg.validate()?;
    if let Some(r) = resume {
        if !r.is_file() {
            return Err(usage(format!("checkpoint {} does not exist", r.display())));
        }
    }
    let train = cfg.dataset.load(Split::Train)?;
    cfg.write_resolved()?;
    info!("training on {} samples", train.len());
    Ok(run_training(&cfg.train, &train, resume)?)
}

/// Encoder and projector outputs of a dataset as f64 matrices.
pub struct Features {
    pub latent: Array2<f64>,
    pub projection: Array2<f64>,
}

pub fn features(model: &Model<f32>, ds: &Dataset) -> Result<Features> {
    let h = model.encode_all(&ds.images, 256)?;
    let z = model.project_tensor(&h)?;
    Ok(Features {
        latent: to_array(&h)?,
        projection: to_array(&z)?,
    })
}

/// The labelled share of the training set seen by the evaluators.
pub fn labelled_subset(train: &Dataset, opts: &EvalOptions, seed: u64) -> Result<Dataset> {
    subset(train, opts.label_fraction, seed)
}

/// Scores one split with the requested methods. `labelled` supplies the label
/// map, the kNN memory bank and the probe's training set.
pub fn evaluate_split(
    model: &Model<f32>,
    protos: Option<&PrototypeMatrix>,
    labelled: &Dataset,
    target: &Dataset,
    opts: &EvalOptions,
    seed: u64,
) -> Result<Vec<MetricsEntry>> {
    let classes = labelled.class_count.max(target.class_count);
    let fl = features(model, labelled)?;
    let ft = features(model, target)?;
    let mut out = Vec::new();
    for &method in &opts.methods {
        let (pred, probe_input) = match method {
            Method::Stat => {
                let p = protos.ok_or_else(|| Error::Config("checkpoint has no prototypes".into()))?;
                let map = fit_cluster_label_map(fl.latent.view(), &labelled.labels, classes, p)?;
                (predict_stat(ft.latent.view(), p, &map)?, None)
            }
            Method::Knn => {
                let bank = MemoryBank::new(fl.latent.clone(), labelled.labels.clone(), opts.k_neighbors)?;
                (knn_predict(&bank, ft.latent.view())?, None)
            }
            Method::Linear => {
                let pick = |f: &Features| match opts.probe.input {
                    ProbeInput::Projection => f.projection.clone(),
                    ProbeInput::Latent => f.latent.clone(),
                };
                let cfg = ProbeConfig {
                    seed: opts.probe.seed ^ seed,
                    ..opts.probe.clone()
                };
                let probe = linear_probe(pick(&fl).view(), &labelled.labels, classes, &cfg)?;
                (probe.predict(pick(&ft).view()), Some(opts.probe.input))
            }
        };
        let m = compute_metrics(&pred, &target.labels, classes)?;
        info!("{} on {}: accuracy {:.4}", method, target.split, m.accuracy);
        out.push(MetricsEntry {
            model: String::new(),
            dataset: String::new(),
            split: target.split.to_string(),
            method,
            probe_input,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
        });
    }
    Ok(out)
}

fn check_checkpoint(path: &Path) -> std::result::Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("checkpoint {} does not exist", path.display())))
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> std::result::Result<Vec<MetricsEntry>, CliError> {
    cfg.validate()?;
    check_checkpoint(checkpoint)?;
    for &s in &cfg.eval.splits {
        cfg.dataset.check(s)?;
    }
    let (model, protos, _) = load_model(checkpoint)?;
    if cfg.eval.methods.contains(&Method::Stat) && protos.is_none() {
        return Err(usage(format!("{} has no prototypes; the stat method needs them", checkpoint.display())));
    }
    cfg.write_resolved()?;
    let labelled = labelled_subset(&cfg.dataset.load(Split::Train)?, &cfg.eval, cfg.train.seed)?;
    let mut report = Vec::new();
    for &split in &cfg.eval.splits {
        let target = cfg.dataset.load(split)?;
        for mut e in evaluate_split(&model, protos.as_ref(), &labelled, &target, &cfg.eval, cfg.train.seed)? {
            e.model = checkpoint.display().to_string();
            e.dataset = cfg.dataset.name.clone();
            report.push(e);
        }
    }
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    fs::write(cfg.out_dir.join(METRICS_REPORT), json).map_err(Error::from)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct Visualization {
    pub plots: PlotFiles,
    pub tiles: PathBuf,
    /// Pixel variance of each prototype tile.
    pub tile_variance: Vec<f64>,
}

/// t-SNE of the first evaluated split coloured three ways, plus the
/// reconstruction of every prototype tiled into one PNG.
pub fn cmd_visualize(cfg: &RunConfig, checkpoint: &Path) -> std::result::Result<Visualization, CliError> {
    cfg.validate()?;
    check_checkpoint(checkpoint)?;
    let split = cfg.eval.splits[0];
    cfg.dataset.check(split)?;
    let (model, protos, _) = load_model(checkpoint)?;
    let protos = protos.ok_or_else(|| usage(format!("{} has no prototypes", checkpoint.display())))?;
    cfg.write_resolved()?;

    let labelled = labelled_subset(&cfg.dataset.load(Split::Train)?, &cfg.eval, cfg.train.seed)?;
    let target = cfg.dataset.load(split)?.head(cfg.eval.tsne_max_points);
    let classes = labelled.class_count.max(target.class_count);
    let map = fit_cluster_label_map(features(&model, &labelled)?.latent.view(), &labelled.labels, classes, &protos)?;
    let h = features(&model, &target)?.latent;
    let clusters = protos.hard_label(h.view())?;
    let mapped: Vec<usize> = clusters.iter().map(|&c| map.mapping[c]).collect();
    let tsne_cfg = TsneConfig {
        seed: cfg.eval.tsne.seed ^ cfg.train.seed,
        ..cfg.eval.tsne.clone()
    };
    let emb = tsne_embed(h.view(), &tsne_cfg)?;
    let plots = export_plots(emb.coords.view(), &target.labels, &clusters, &mapped, &cfg.out_dir)?;

    let tiles = prototype_reconstructions(&model, &protos)?;
    let tiles_path = cfg.out_dir.join(PROTOTYPE_TILES);
    write_tiles_png(&tiles, IMAGE_SIDE, &tiles_path)?;
    Ok(Visualization {
        plots,
        tiles: tiles_path,
        tile_variance: tiles.iter().map(|t| pixel_variance(t)).collect(),
    })
}

/// Human-readable summary of a checkpoint.
pub fn cmd_inspect(checkpoint: &Path) -> std::result::Result<serde_json::Value, CliError> {
    check_checkpoint(checkpoint)?;
    let (state, cfg) = load_checkpoint(checkpoint)?;
    let last = state.log.last();
    Ok(serde_json::json!({
        "epoch": state.epoch(),
        "warmup_epochs": cfg.warmup_epochs,
        "total_epochs": cfg.total_epochs,
        "parameters": state.model.store.num_elements(),
        "k": state.prototypes.as_ref().map(PrototypeMatrix::k),
        "elbow_curve": state.elbow_curve,
        "last_epoch": last,
        "seed": cfg.seed,
    }))
}

