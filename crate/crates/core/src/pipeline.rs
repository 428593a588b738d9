//! Two-phase training.
//!
//! Warmup trains encoder, projector and decoder on the contrastive plus
//! reconstruction objective. At the phase boundary the encoder is frozen,
//! prototypes are found by KMeans on the training latents, and the decoder is
//! fine-tuned on reconstruction while conditioned on soft assignments.

use std::fs;
use std::path::{Path, PathBuf};

use contra_nncore::{Checkpoint, CheckpointWriter, Lars, LarsConfig, ScheduleConfig, Tape, Tensor};
use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, AugmentConfig};
use crate::cluster::{elbow_select, ClusterConfig, PrototypeMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{mse, ntxent_stacked, LossConfig};
use crate::model::{Binding, Model, LATENT_DIM};
use crate::seed;

pub const WARMUP_CHECKPOINT: &str = "warmup.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const LOSS_LOG: &str = "loss_log.csv";

/// Learning-rate curve; its end point is the last training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrConfig {
    pub start_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub ramp_epochs: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            start_lr: s.start_lr,
            peak_lr: s.peak_lr,
            final_lr: s.final_lr,
            ramp_epochs: s.ramp_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub lr: LrConfig,
    pub lars: LarsConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub cluster: ClusterConfig,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 50,
            total_epochs: 100,
            batch_size: 256,
            lr: LrConfig::default(),
            lars: LarsConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            cluster: ClusterConfig::default(),
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    /// The ramp is shortened to fit runs with fewer than `ramp_epochs` epochs.
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            start_lr: self.lr.start_lr,
            peak_lr: self.lr.peak_lr,
            final_lr: self.lr.final_lr,
            ramp_epochs: self.lr.ramp_epochs.min(self.total_epochs),
            total_epochs: self.total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "need 0 < warmup_epochs ({}) < total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.schedule().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.cluster.validate()?;
        let l = &self.lars;
        if !(l.momentum >= 0.0 && l.momentum < 1.0 && l.weight_decay >= 0.0 && l.trust_coefficient > 0.0 && l.eps >= 0.0) {
            return Err(Error::Config(format!("invalid LARS config {l:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Finetune => "finetune",
        }
    }
}

/// Mean losses of one epoch. `mean_recon` is `mse(x1, y1) + mse(x2, y2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_contrastive: f64,
    pub mean_recon: f64,
    pub lr: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: Lars<f32>,
    pub prototypes: Option<PrototypeMatrix>,
    pub elbow_curve: Vec<(usize, f64)>,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            model: Model::new(cfg.seed)?,
            optimizer: Lars::new(cfg.lars),
            prototypes: None,
            elbow_curve: Vec::new(),
            log: Vec::new(),
        })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.log.len()
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    pub prototypes: PrototypeMatrix,
    pub elbow_curve: Vec<(usize, f64)>,
    pub log: Vec<EpochLog>,
}

/// Row-major f32 tensor to an f64 matrix.
pub fn to_array(t: &Tensor<f32>) -> Result<Array2<f64>> {
    let (r, c) = t.dims2()?;
    Ok(Array2::from_shape_vec((r, c), t.data().iter().map(|&v| v as f64).collect()).expect("shape matches"))
}

fn batches(n: usize, batch_size: usize, root_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(root_seed, "shuffle", epoch as u64));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn augment_seed(cfg: &TrainConfig, epoch: usize, batch: usize) -> u64 {
    seed::derive(cfg.seed ^ cfg.augment.seed, "augment", ((epoch as u64) << 32) | batch as u64)
}

/// Two augmented views stacked along the batch axis (2B×1×H×W).
fn stacked_views(data: &Dataset, idx: &[usize], cfg: &TrainConfig, epoch: usize, b: usize) -> Result<Tensor<f32>> {
    let x = data.batch(idx);
    let (x1, x2) = augment_pair(&x, &cfg.augment, augment_seed(cfg, epoch, b))?;
    let mut shape = x.shape().to_vec();
    shape[0] *= 2;
    let mut stacked = x1.into_data();
    stacked.extend(x2.into_data());
    Ok(Tensor::new(&shape, stacked)?)
}

fn non_finite(epoch: usize, batch: usize, what: &str, contrastive: f64, recon: f64, x: &Tensor<f32>) -> Error {
    let (lo, hi) = x.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Error::Training(format!(
        "{what} at epoch {epoch}, batch {batch}: contrastive={contrastive}, recon={recon}, input range [{lo}, {hi}]"
    ))
}

/// One warmup epoch: contrastive + α·reconstruction, updating e, p and d.
pub fn warmup_epoch(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<EpochLog> {
    if epoch >= cfg.warmup_epochs {
        return Err(Error::Argument(format!("epoch {epoch} is not a warmup epoch")));
    }
    let lr = cfg.schedule().lr_at(epoch)?;
    let mut sums = (0.0, 0.0);
    let groups = batches(data.len(), cfg.batch_size, cfg.seed, epoch);
    for (b, idx) in groups.iter().enumerate() {
        let xs = stacked_views(data, idx, cfg, epoch, b)?;
        let model = &state.model;
        let tape = Tape::new();
        let x = tape.constant(xs.clone());
        let h = model.encode(&tape, x, Binding::Trainable)?;
        let z = model.project(&tape, h, Binding::Trainable)?;
        let y = model.decode(&tape, h, Binding::Trainable)?;
        let lc = ntxent_stacked(&tape, z, cfg.loss.temperature)?;
        // mse over both stacked views is the mean of the two per-view terms
        let recon = tape.scale(mse(&tape, y, x)?, 2.0);
        let loss = tape.add(lc, tape.scale(recon, cfg.loss.alpha as f32))?;
        let (c, r) = (tape.value(lc).data()[0] as f64, tape.value(recon).data()[0] as f64);
        if !(c.is_finite() && r.is_finite()) {
            return Err(non_finite(epoch, b, "non-finite loss", c, r, &xs));
        }
        let store = &mut state.model.store;
        tape.backward(loss, store)?;
        state
            .optimizer
            .step(store, lr)
            .map_err(|e| non_finite(epoch, b, &e.to_string(), c, r, &xs))?;
        store.zero_grad();
        sums.0 += c;
        sums.1 += r;
    }
    let n = groups.len() as f64;
    Ok(EpochLog {
        epoch,
        phase: Phase::Warmup,
        mean_contrastive: sums.0 / n,
        mean_recon: sums.1 / n,
        lr,
    })
}

/// Soft assignments of latent rows as an f32 tensor.
pub fn soft_assign_tensor(protos: &PrototypeMatrix, h: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = protos.soft_assign(to_array(h)?.view())?;
    Ok(Tensor::new(&[s.nrows(), s.ncols()], s.iter().map(|&v| v as f32).collect())?)
}

/// Encodes the training set, picks k by the elbow method and installs the
/// conditioning head. The encoder is only read.
pub fn discover_prototypes(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig) -> Result<PrototypeMatrix> {
    let latents = to_array(&state.model.encode_all(&data.images, 256)?)?;
    let elbow = elbow_select(latents.view(), &cfg.cluster, seed::derive(cfg.seed, "kmeans", 0))?;
    info!("elbow curve {:?}; selected k={}", elbow.curve, elbow.k);
    let protos = PrototypeMatrix::from_centroids(&elbow.fit.centroids, cfg.cluster.assignment_temperature)?;
    state.model.add_conditioning(elbow.k, cfg.seed)?;
    state.prototypes = Some(protos.clone());
    state.elbow_curve = elbow.curve;
    Ok(protos)
}

/// One fine-tuning epoch: reconstruction only, frozen encoder, decoder conditioned
/// on soft assignments to the prototypes.
pub fn finetune_epoch(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<EpochLog> {
    if epoch < cfg.warmup_epochs || epoch >= cfg.total_epochs {
        return Err(Error::Argument(format!("epoch {epoch} is not a fine-tune epoch")));
    }
    let protos = state
        .prototypes
        .clone()
        .ok_or_else(|| Error::Consistency("fine-tuning needs prototypes".into()))?;
    let lr = cfg.schedule().lr_at(epoch)?;
    let mut sum = 0.0;
    let groups = batches(data.len(), cfg.batch_size, cfg.seed, epoch);
    for (b, idx) in groups.iter().enumerate() {
        let xs = stacked_views(data, idx, cfg, epoch, b)?;
        let model = &state.model;
        let tape = Tape::new();
        let x = tape.constant(xs.clone());
        let h = model.encode(&tape, x, Binding::Frozen)?;
        let c = tape.constant(soft_assign_tensor(&protos, &tape.value(h))?);
        let y = model.decode_conditional(&tape, h, c, Binding::Trainable)?;
        let recon = tape.scale(mse(&tape, y, x)?, 2.0);
        let r = tape.value(recon).data()[0] as f64;
        if !r.is_finite() {
            return Err(non_finite(epoch, b, "non-finite loss", 0.0, r, &xs));
        }
        let store = &mut state.model.store;
        tape.backward(recon, store)?;
        state
            .optimizer
            .step(store, lr)
            .map_err(|e| non_finite(epoch, b, &e.to_string(), 0.0, r, &xs))?;
        store.zero_grad();
        sum += r;
    }
    Ok(EpochLog {
        epoch,
        phase: Phase::Finetune,
        mean_contrastive: 0.0,
        mean_recon: sum / groups.len() as f64,
        lr,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    phase: Phase,
    config: TrainConfig,
    k: Option<usize>,
    assignment_temperature: Option<f64>,
    elbow_curve: Vec<(usize, f64)>,
    loss_log: Vec<EpochLog>,
    optimizer_step: u64,
}

const MODEL_PREFIX: &str = "model.";
const MOMENTUM_PREFIX: &str = "optim.momentum.";
const PROTOTYPES: &str = "prototypes";

pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut w = CheckpointWriter::new(state.epoch());
    w.add_params(MODEL_PREFIX, &state.model.store)?;
    for (name, buf) in &state.optimizer.state.first {
        w.add_tensor(&format!("{MOMENTUM_PREFIX}{name}"), "optimizer", buf)?;
    }
    if let Some(p) = &state.prototypes {
        let cols = p.columns();
        let t = Tensor::new(&[cols.nrows(), cols.ncols()], cols.iter().copied().collect())?;
        w.add_tensor(PROTOTYPES, "cluster", &t)?;
    }
    let meta = CheckpointMeta {
        phase: if state.epoch() < cfg.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Finetune
        },
        config: cfg.clone(),
        k: state.prototypes.as_ref().map(PrototypeMatrix::k),
        assignment_temperature: state.prototypes.as_ref().map(PrototypeMatrix::temperature),
        elbow_curve: state.elbow_curve.clone(),
        loss_log: state.log.clone(),
        optimizer_step: state.optimizer.state.step,
    };
    w.write(path, serde_json::to_value(meta)?)?;
    Ok(())
}

/// Restores a training state. The stored config is returned alongside it.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let ckpt = Checkpoint::read(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.manifest.meta.clone())?;
    let cfg = meta.config;
    let mut state = TrainState::new(&cfg)?;
    if meta.loss_log.len() != ckpt.manifest.epoch {
        return Err(Error::Consistency(format!(
            "checkpoint epoch {} disagrees with {} logged epochs",
            ckpt.manifest.epoch,
            meta.loss_log.len()
        )));
    }
    if let (Some(k), Some(temp)) = (meta.k, meta.assignment_temperature) {
        state.model.add_conditioning(k, cfg.seed)?;
        let t = ckpt.tensor::<f64>(PROTOTYPES)?;
        let (d, kk) = t.dims2()?;
        if kk != k || d != LATENT_DIM {
            return Err(Error::Consistency(format!("prototype tensor is {d}×{kk}, expected {LATENT_DIM}×{k}")));
        }
        let cols = Array2::from_shape_vec((d, kk), t.into_data()).expect("shape matches");
        state.prototypes = Some(PrototypeMatrix::new(cols, temp)?);
    }
    ckpt.load_params(MODEL_PREFIX, &mut state.model.store)?;
    for e in &ckpt.manifest.tensors {
        if let Some(name) = e.name.strip_prefix(MOMENTUM_PREFIX) {
            state.optimizer.state.first.insert(name.to_string(), ckpt.tensor(&e.name)?);
        }
    }
    state.optimizer.state.step = meta.optimizer_step;
    state.elbow_curve = meta.elbow_curve;
    state.log = meta.loss_log;
    Ok((state, cfg))
}

/// Restores only the model and prototypes, e.g. for evaluation.
pub fn load_model(path: &Path) -> Result<(Model<f32>, Option<PrototypeMatrix>, TrainConfig)> {
    let (state, cfg) = load_checkpoint(path)?;
    Ok((state.model, state.prototypes, cfg))
}

pub fn write_loss_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "phase", "mean_contrastive", "mean_recon", "lr"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.phase.as_str().to_string(),
            e.mean_contrastive.to_string(),
            e.mean_recon.to_string(),
            e.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs (or resumes) both phases, checkpointing after every epoch, at the
/// phase boundary and at the end.
pub fn run_training(cfg: &TrainConfig, data: &Dataset, resume: Option<&Path>) -> Result<RunArtifacts> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let dir = &cfg.checkpoint_dir;
    fs::create_dir_all(dir)?;
    let mut state = match resume {
        Some(path) => {
            let (state, stored) = load_checkpoint(path)?;
            if stored != *cfg {
                warn!("resuming with a config that differs from the checkpoint's");
            }
            info!("resuming after epoch {}", state.epoch());
            state
        }
        None => TrainState::new(cfg)?,
    };
    if state.epoch() > cfg.total_epochs {
        return Err(Error::Consistency(format!(
            "checkpoint has {} epochs, config only {}",
            state.epoch(),
            cfg.total_epochs
        )));
    }

    while state.epoch() < cfg.warmup_epochs {
        let epoch = state.epoch();
        let entry = warmup_epoch(&mut state, data, cfg, epoch)?;
        info!(
            "epoch {epoch} warmup: contrastive {:.5} recon {:.5} lr {:.4}",
            entry.mean_contrastive, entry.mean_recon, entry.lr
        );
        state.log.push(entry);
        save_checkpoint(&state, cfg, &dir.join(LATEST_CHECKPOINT))?;
        write_loss_log(&state.log, &dir.join(LOSS_LOG))?;
    }
    if state.prototypes.is_none() {
        discover_prototypes(&mut state, data, cfg)?;
        save_checkpoint(&state, cfg, &dir.join(WARMUP_CHECKPOINT))?;
    }
    while state.epoch() < cfg.total_epochs {
        let epoch = state.epoch();
        let entry = finetune_epoch(&mut state, data, cfg, epoch)?;
        info!("epoch {epoch} finetune: recon {:.5} lr {:.4}", entry.mean_recon, entry.lr);
        state.log.push(entry);
        save_checkpoint(&state, cfg, &dir.join(LATEST_CHECKPOINT))?;
        write_loss_log(&state.log, &dir.join(LOSS_LOG))?;
    }
    let final_path = dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&state, cfg, &final_path)?;
    write_loss_log(&state.log, &dir.join(LOSS_LOG))?;
    Ok(RunArtifacts {
        checkpoint: final_path,
        prototypes: state.prototypes.clone().expect("prototypes discovered"),
        elbow_curve: state.elbow_curve,
        log: state.log,
    })
}
