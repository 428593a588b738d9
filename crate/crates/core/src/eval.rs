//! Downstream evaluation of the latent space: statistical cluster→label
//! mapping, kNN over a memory bank, a linear probe, classification metrics,
//! t-SNE and plot export.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use contra_nncore::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::PrototypeMatrix;
use crate::error::{Error, Result};
use crate::model::{Model, IMAGE_SIDE};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stat,
    Knn,
    #[serde(rename = "lin")]
    Linear,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stat => "stat",
            Method::Knn => "knn",
            Method::Linear => "lin",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stat" => Ok(Method::Stat),
            "knn" => Ok(Method::Knn),
            "lin" | "linear" => Ok(Method::Linear),
            other => Err(Error::Argument(format!("unknown evaluation method {other:?}"))),
        }
    }
}

/// Most frequent value of a histogram; ties go to the smaller index.
fn mode(hist: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in hist.iter().enumerate() {
        if c > hist[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabelMap {
    /// Class label of each cluster.
    pub mapping: Vec<usize>,
    /// Per-cluster histogram of true labels.
    pub support: Vec<Vec<usize>>,
}

impl ClusterLabelMap {
    /// Maps each cluster to the modal true label of its members. Empty clusters
    /// get the global modal label.
    pub fn from_assignments(clusters: &[usize], labels: &[usize], k: usize, class_count: usize) -> Result<Self> {
        if clusters.len() != labels.len() || clusters.is_empty() {
            return Err(Error::Argument(format!(
                "need equal nonempty cluster and label lists, got {} and {}",
                clusters.len(),
                labels.len()
            )));
        }
        if let Some(&c) = clusters.iter().find(|&&c| c >= k) {
            return Err(Error::Argument(format!("cluster index {c} out of range for k={k}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Argument(format!("label {l} out of range for {class_count} classes")));
        }
        let mut support = vec![vec![0usize; class_count]; k];
        let mut global = vec![0usize; class_count];
        for (&c, &l) in clusters.iter().zip(labels) {
            support[c][l] += 1;
            global[l] += 1;
        }
        let fallback = mode(&global);
        let mapping = support
            .iter()
            .enumerate()
            .map(|(c, h)| {
                if h.iter().all(|&n| n == 0) {
                    warn!("cluster {c} is empty; mapping it to the global modal label {fallback}");
                    fallback
                } else {
                    mode(h)
                }
            })
            .collect();
        Ok(Self { mapping, support })
    }

    pub fn k(&self) -> usize {
        self.mapping.len()
    }
}

pub fn fit_cluster_label_map(
    latents: ArrayView2<f64>,
    labels: &[usize],
    class_count: usize,
    protos: &PrototypeMatrix,
) -> Result<ClusterLabelMap> {
    let clusters = protos.hard_label(latents)?;
    ClusterLabelMap::from_assignments(&clusters, labels, protos.k(), class_count)
}

pub fn predict_stat(latents: ArrayView2<f64>, protos: &PrototypeMatrix, map: &ClusterLabelMap) -> Result<Vec<usize>> {
    if map.k() != protos.k() {
        return Err(Error::Argument(format!("label map covers {} clusters, prototypes {}", map.k(), protos.k())));
    }
    Ok(protos.hard_label(latents)?.into_iter().map(|c| map.mapping[c]).collect())
}

/// Labelled latents queried by kNN.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    latents: Array2<f64>,
    labels: Vec<usize>,
    k_neighbors: usize,
}

impl MemoryBank {
    pub fn new(latents: Array2<f64>, labels: Vec<usize>, k_neighbors: usize) -> Result<Self> {
        if latents.nrows() != labels.len() {
            return Err(Error::Argument(format!(
                "{} latents but {} labels",
                latents.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Argument("memory bank is empty".into()));
        }
        if k_neighbors == 0 || k_neighbors > labels.len() {
            return Err(Error::Argument(format!(
                "k_neighbors={k_neighbors} must be in 1..={}",
                labels.len()
            )));
        }
        Ok(Self {
            latents,
            labels,
            k_neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Bank indices of the `k` nearest entries by Euclidean distance; equal
    /// distances are ordered by bank index.
    pub fn neighbors(&self, query: &[f64]) -> Vec<usize> {
        let k = self.k_neighbors;
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.latents.outer_iter().enumerate() {
            let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }
}

/// Modal label of the k nearest bank entries; label ties go to the smaller label.
pub fn knn_predict(bank: &MemoryBank, queries: ArrayView2<f64>) -> Result<Vec<usize>> {
    if queries.ncols() != bank.latents.ncols() {
        return Err(Error::Argument(format!(
            "query width {} does not match bank width {}",
            queries.ncols(),
            bank.latents.ncols()
        )));
    }
    let classes = bank.labels.iter().max().map_or(0, |m| m + 1);
    Ok((0..queries.nrows())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q).to_vec();
            let mut hist = vec![0usize; classes];
            for i in bank.neighbors(&query) {
                hist[bank.labels[i]] += 1;
            }
            mode(&hist)
        })
        .collect())
}

/// Which representation the linear probe reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInput {
    /// Projector output z.
    #[default]
    Projection,
    /// Encoder output h.
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub input: ProbeInput,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 3e-4,
            batch_size: 256,
            input: ProbeInput::Projection,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Mean softmax cross-entropy of `logits` (N×C) against integer labels.
pub fn softmax_cross_entropy(tape: &Tape<f64>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lv = tape.value(logits);
    let (n, c) = lv.dims2()?;
    if n != labels.len() || n == 0 {
        return Err(Error::Argument(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Argument(format!("label {l} out of range for {c} classes")));
    }
    let mut probs = vec![0.0; n * c];
    let mut loss = 0.0;
    for i in 0..n {
        let row = lv.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..c {
            probs[i * c + j] = (row[j] - max).exp() / total;
        }
        loss += max + total.ln() - row[labels[i]];
    }
    let mut grad = probs;
    for (i, &l) in labels.iter().enumerate() {
        grad[i * c + l] -= 1.0;
    }
    let grad = Tensor::new(&[n, c], grad.into_iter().map(|g| g / n as f64).collect())?;
    Ok(tape.custom(
        &[logits],
        Tensor::scalar(loss / n as f64),
        Box::new(move |g, _| vec![Some(grad.map(|v| v * g.data()[0]))]),
    ))
}

#[derive(Clone, Debug)]
pub struct LinearProbe {
    /// C×D.
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (c, d) = (self.weight.shape()[0], self.weight.shape()[1]);
        let w = Array2::from_shape_vec((c, d), self.weight.data().to_vec()).expect("weight shape");
        let mut out = x.dot(&w.t());
        for mut row in out.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        out
    }

    /// Argmax class per row; ties go to the smaller class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x)
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Trains a softmax classifier on frozen features with Adam. Weights start at
/// zero, so an untrained probe predicts uniformly.
pub fn linear_probe(features: ArrayView2<f64>, labels: &[usize], class_count: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = features.dim();
    if n != labels.len() || n == 0 {
        return Err(Error::Argument(format!("{n} feature rows for {} labels", labels.len())));
    }
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if let Some(missing) = (0..class_count).find(|c| !present.contains(c)) {
        return Err(Error::Argument(format!("class {missing} has no training sample")));
    }
    if present.len() > class_count {
        return Err(Error::Argument(format!("labels exceed {class_count} classes")));
    }
    let mut store = ParamStore::<f64>::new();
    let w = store.add("probe.weight", "probe", Tensor::zeros(&[class_count, d]))?;
    let b = store.add("probe.bias", "probe", Tensor::zeros(&[class_count]))?;
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(cfg.seed, "probe", 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(bs) {
            let x = Tensor::from_fn(&[idx.len(), d], |i| features[[idx[i / d], i % d]]);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let tape = Tape::new();
            let xv = tape.constant(x);
            let logits = tape.linear(xv, tape.param(&store, w), tape.param(&store, b))?;
            let loss = softmax_cross_entropy(&tape, logits, &y)?;
            total += tape.value(loss).data()[0] * idx.len() as f64;
            tape.backward(loss, &mut store)?;
            adam.step(&mut store, cfg.lr)?;
            store.zero_grad();
        }
        history.push(total / n as f64);
    }
    Ok(LinearProbe {
        weight: store.get(w).value.clone(),
        bias: store.get(b).value.clone(),
        loss_history: history,
    })
}

/// Accuracy with macro-averaged precision and recall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Macro averages run over the classes that occur in `pred` or `truth`. A class
/// with no predictions (or no true members) scores 0 precision (or recall).
pub fn compute_metrics(pred: &[usize], truth: &[usize], class_count: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    if let Some(&l) = pred.iter().chain(truth).find(|&&l| l >= class_count) {
        return Err(Error::Argument(format!("label {l} out of range for {class_count} classes")));
    }
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut actual = vec![0usize; class_count];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let classes: Vec<usize> = (0..class_count).filter(|&c| predicted[c] + actual[c] > 0).collect();
    let (mut prec, mut rec) = (0.0, 0.0);
    for &c in &classes {
        if predicted[c] > 0 {
            prec += tp[c] as f64 / predicted[c] as f64;
        } else {
            warn!("class {c} was never predicted; its precision counts as 0");
        }
        if actual[c] > 0 {
            rec += tp[c] as f64 / actual[c] as f64;
        } else {
            warn!("class {c} does not occur in the ground truth; its recall counts as 0");
        }
    }
    let m = classes.len() as f64;
    let correct = tp.iter().sum::<usize>();
    Ok(Metrics {
        accuracy: correct as f64 / pred.len() as f64,
        precision: prec / m,
        recall: rec / m,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(N / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    /// N×2.
    pub coords: Array2<f64>,
    /// (iteration, KL(P‖Q)) samples, densely over the final 100 iterations.
    pub kl_history: Vec<(usize, f64)>,
    /// Shannon entropy (nats) of each conditional distribution after the σ search.
    pub entropies: Vec<f64>,
}

fn pairwise_sq(x: ArrayView2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Row-conditional affinities `p(j|i)` (N×N, row-major) whose entropies match
/// `ln(perplexity)`, found by bisection on the Gaussian precision per row.
pub fn conditional_affinities(sq_dists: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let entropies: Vec<f64> = p
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let d = &sq_dists[i * n..(i + 1) * n];
            let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            let mut h = 0.0;
            for _ in 0..200 {
                // shift by the nearest distance so the largest weight is exp(0)
                let mut sum = 0.0;
                let mut dot = 0.0;
                for j in 0..n {
                    row[j] = if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() };
                    sum += row[j];
                    dot += row[j] * (d[j] - dmin);
                }
                h = sum.ln() + beta * dot / sum;
                row.iter_mut().for_each(|v| *v /= sum);
                if (h - target).abs() < 1e-6 {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            h
        })
        .collect();
    (p, entropies)
}

fn kl_divergence(p: &[f64], y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for (idx, &pij) in p.iter().enumerate() {
        if pij > 0.0 {
            let q = (num[idx] / z).max(1e-300);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

/// Exact t-SNE to two dimensions.
pub fn tsne_embed(x: ArrayView2<f64>, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.nrows();
    if (n as f64) < 3.0 * cfg.perplexity || n < 4 {
        return Err(Error::Argument(format!(
            "t-SNE with perplexity {} needs at least {} points, got {n}",
            cfg.perplexity,
            (3.0 * cfg.perplexity).ceil()
        )));
    }
    let d2 = pairwise_sq(x);
    let (cond, entropies) = conditional_affinities(&d2, n, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);

    let mut rng = seed::rng(cfg.seed, "tsne", 0);
    let normal = Normal::<f64>::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_history = Vec::new();
    let tail_start = cfg.iterations.saturating_sub(100);
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.early_exaggeration / 4.0).max(50.0));

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let num: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i == j {
                    0.0
                } else {
                    let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                    1.0 / (1.0 + d)
                }
            })
            .collect();
        let z: f64 = num.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                    g[0] += 4.0 * w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += 4.0 * w * (y[[i, 1]] - y[[j, 1]]);
                }
                g
            })
            .collect();
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                let same_sign = (g > 0.0) == (velocity[[i, c]] > 0.0);
                gains[[i, c]] = if same_sign { (gains[[i, c]] * 0.8f64).max(0.01) } else { gains[[i, c]] + 0.2 };
                velocity[[i, c]] = momentum * velocity[[i, c]] - lr * gains[[i, c]] * g;
                y[[i, c]] += velocity[[i, c]];
            }
        }
        // recentre
        let mean = y.mean_axis(ndarray::Axis(0)).expect("nonempty");
        y -= &mean;
        if it >= tail_start || it % 50 == 0 {
            kl_history.push((it, kl_divergence(&p, &y)));
        }
    }
    Ok(TsneResult {
        coords: y,
        kl_history,
        entropies,
    })
}

/// Distinct colours for `n` categories.
pub fn palette(n: usize) -> Vec<String> {
    const BASE: [&str; 10] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    ];
    (0..n)
        .map(|i| {
            if i < BASE.len() {
                BASE[i].to_string()
            } else {
                // golden-angle hues beyond the base set
                let hue = (i as f64 * 137.508) % 360.0;
                format!("hsl({hue:.1},65%,45%)")
            }
        })
        .collect()
}

/// A scatter plot with one colour per distinct label and a legend.
pub fn scatter_svg(coords: ArrayView2<f64>, labels: &[usize], title: &str) -> String {
    let size = 640.0;
    let margin = 20.0;
    let legend = 110.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in coords.outer_iter() {
        xmin = xmin.min(r[0]);
        xmax = xmax.max(r[0]);
        ymin = ymin.min(r[1]);
        ymax = ymax.max(r[1]);
    }
    let sx = (size - 2.0 * margin) / (xmax - xmin).max(1e-12);
    let sy = (size - 2.0 * margin) / (ymax - ymin).max(1e-12);
    let distinct: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let colors = palette(distinct.len());
    let color_of = |l: usize| &colors[distinct.binary_search(&l).expect("label listed")];

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = size + legend,
        h = size,
        title = xml_escape(title)
    );
    for (r, &l) in coords.outer_iter().zip(labels) {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            margin + (r[0] - xmin) * sx,
            size - margin - (r[1] - ymin) * sy,
            color_of(l)
        ));
    }
    for (i, &l) in distinct.iter().enumerate() {
        let y = margin + 18.0 * i as f64;
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.1}\" width=\"10\" height=\"10\" fill=\"{c}\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.1}\" font-family=\"sans-serif\" font-size=\"12\">{l}</text>\n",
            x = size + 10.0,
            c = colors[i],
            tx = size + 26.0,
            ty = y + 10.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Clone, Debug)]
pub struct PlotFiles {
    pub real_svg: PathBuf,
    pub cluster_svg: PathBuf,
    pub mapped_svg: PathBuf,
    pub csv: PathBuf,
}

/// Three scatter plots (true labels, cluster labels, cluster labels mapped to
/// classes) and a CSV of the coordinates with all three label columns.
pub fn export_plots(
    coords: ArrayView2<f64>,
    labels: &[usize],
    cluster_labels: &[usize],
    mapped_labels: &[usize],
    out_dir: &Path,
) -> Result<PlotFiles> {
    let n = coords.nrows();
    if coords.ncols() != 2 || labels.len() != n || cluster_labels.len() != n || mapped_labels.len() != n {
        return Err(Error::Argument("coordinates and label columns differ in length".into()));
    }
    fs::create_dir_all(out_dir)?;
    let files = PlotFiles {
        real_svg: out_dir.join("tsne_real_labels.svg"),
        cluster_svg: out_dir.join("tsne_cluster_labels.svg"),
        mapped_svg: out_dir.join("tsne_mapped_labels.svg"),
        csv: out_dir.join("tsne_coords.csv"),
    };
    fs::write(&files.real_svg, scatter_svg(coords, labels, "real labels"))?;
    fs::write(&files.cluster_svg, scatter_svg(coords, cluster_labels, "cluster labels"))?;
    fs::write(&files.mapped_svg, scatter_svg(coords, mapped_labels, "cluster labels mapped to real labels"))?;
    let mut w = csv::Writer::from_path(&files.csv)?;
    w.write_record(["x", "y", "real_label", "cluster_label", "mapped_label"])?;
    for i in 0..n {
        w.write_record([
            coords[[i, 0]].to_string(),
            coords[[i, 1]].to_string(),
            labels[i].to_string(),
            cluster_labels[i].to_string(),
            mapped_labels[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(files)
}

/// Reconstruction of every prototype through the conditional decoder, each
/// conditioned on its own one-hot assignment. Returns k images of 28×28.
pub fn prototype_reconstructions(model: &Model<f32>, protos: &PrototypeMatrix) -> Result<Vec<Vec<f32>>> {
    let k = protos.k();
    let cols = protos.columns();
    let h = Tensor::from_fn(&[k, cols.nrows()], |i| cols[[i % cols.nrows(), i / cols.nrows()]] as f32);
    let c = Tensor::from_fn(&[k, k], |i| if i / k == i % k { 1.0 } else { 0.0 });
    let y = model.decode_conditional_tensor(&h, &c)?;
    let p = IMAGE_SIDE * IMAGE_SIDE;
    Ok(y.data().chunks(p).map(<[f32]>::to_vec).collect())
}

/// Population variance of one tile.
pub fn pixel_variance(tile: &[f32]) -> f64 {
    let n = tile.len() as f64;
    let mean = tile.iter().map(|&v| v as f64).sum::<f64>() / n;
    tile.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Writes tiles side by side as one grayscale PNG with a 2-pixel gap.
pub fn write_tiles_png(tiles: &[Vec<f32>], side: usize, path: &Path) -> Result<()> {
    if tiles.is_empty() || tiles.iter().any(|t| t.len() != side * side) {
        return Err(Error::Argument("tiles must be nonempty and square".into()));
    }
    let gap = 2;
    let width = tiles.len() * (side + gap) - gap;
    let mut img = image::GrayImage::from_pixel(width as u32, side as u32, image::Luma([255]));
    for (t, tile) in tiles.iter().enumerate() {
        for y in 0..side {
            for x in 0..side {
                let v = (tile[y * side + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((t * (side + gap) + x) as u32, y as u32, image::Luma([v]));
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// One line of the metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub model: String,
    pub dataset: String,
    pub split: String,
    pub method: Method,
    /// Representation read by the linear probe, when `method` is `lin`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe_input: Option<ProbeInput>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}
