//! KMeans with k-means++ seeding, elbow-based choice of k, and cosine soft
//! assignment to prototypes.

use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::cosine_sim;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Lloyd iterations stop once no centroid moves farther than this.
    pub tol: f64,
    pub assignment_temperature: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 12,
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
            assignment_temperature: 0.1,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 || self.k_max < self.k_min || self.n_init == 0 || self.max_iter == 0 {
            return Err(Error::Config(format!("invalid cluster config {self:?}")));
        }
        if !(self.tol >= 0.0) || !(self.assignment_temperature > 0.0) {
            return Err(Error::Config(format!("invalid cluster config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    /// k×D.
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
fn nearest(p: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| nearest(points.row(i), centroids))
        .unzip()
}

fn kmeans_pp(points: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

fn lloyd(points: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize, tol: f64) -> KMeansFit {
    let (n, d) = points.dim();
    let k = centroids.nrows();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let (labels, dists) = assign(points, &centroids);
        history.push(dists.iter().sum());

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &points.row(i));
            counts[l] += 1;
        }
        let mut next = centroids.clone();
        let mut dists = dists;
        for j in 0..k {
            if counts[j] > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                next.row_mut(j).assign(&points.row(far));
                dists[far] = 0.0;
            }
        }
        let shift = next
            .outer_iter()
            .zip(centroids.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let (labels, _) = assign(points, &centroids);
    let centroids = hartigan(points, labels, centroids, max_iter, &mut history);
    let (labels, dists) = assign(points, &centroids);
    let inertia = dists.iter().sum();
    KMeansFit {
        centroids,
        labels,
        inertia,
        history,
    }
}

/// Single-point moves after Lloyd has settled. Moving point i from cluster a to
/// b changes the inertia by `n_b/(n_b+1)·d(i,b) − n_a/(n_a−1)·d(i,a)`; any
/// negative move is taken and the two means are updated in place. A stable
/// result is also Lloyd-stable, with strictly lower or equal inertia.
fn hartigan(
    points: ArrayView2<f64>,
    mut labels: Vec<usize>,
    mut centroids: Array2<f64>,
    max_passes: usize,
    history: &mut Vec<f64>,
) -> Array2<f64> {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    for _ in 0..max_passes {
        let mut moved = false;
        for i in 0..points.nrows() {
            let p = points.row(i);
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(p, centroids.row(a));
            let mut best = (a, leave);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let join = nb / (nb + 1.0) * sq_dist(p, centroids.row(b));
                if join < best.1 {
                    best = (b, join);
                }
            }
            let b = best.0;
            if b == a || leave - best.1 <= 1e-12 * leave {
                continue;
            }
            let nb = counts[b] as f64;
            let ca = (&centroids.row(a) * na - &p) / (na - 1.0);
            let cb = (&centroids.row(b) * nb + &p) / (nb + 1.0);
            centroids.row_mut(a).assign(&ca);
            centroids.row_mut(b).assign(&cb);
            counts[a] -= 1;
            counts[b] += 1;
            labels[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        history.push(
            (0..points.nrows())
                .map(|i| sq_dist(points.row(i), centroids.row(labels[i])))
                .sum(),
        );
    }
    centroids
}

/// Best of `n_init` k-means++ / Lloyd restarts by inertia.
pub fn kmeans_fit(points: ArrayView2<f64>, k: usize, cfg: &ClusterConfig, root_seed: u64) -> Result<KMeansFit> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::Argument(format!("kmeans needs at least k={k} points, got {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("kmeans input contains non-finite values".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for run in 0..cfg.n_init.max(1) {
        let mut rng = seed::rng(root_seed, "kmeans", ((k as u64) << 32) | run as u64);
        let fit = lloyd(points, kmeans_pp(points, k, &mut rng), cfg.max_iter, cfg.tol);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Index of the knee of a decreasing curve: the point lying farthest below the
/// chord joining its endpoints. `None` when no point is meaningfully below it.
pub fn knee_of_curve(xs: &[f64], ys: &[f64]) -> Option<usize> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return None;
    }
    let (x0, y0, x1, y1) = (xs[0], ys[0], xs[n - 1], ys[n - 1]);
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        let chord = y0 + (y1 - y0) * (xs[i] - x0) / (x1 - x0);
        // vertical gap is proportional to the perpendicular distance for a fixed chord
        let below = chord - ys[i];
        if below > 1e-9 * scale && best.is_none_or(|(_, b)| below > b) {
            best = Some((i, below));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug)]
pub struct Elbow {
    pub k: usize,
    /// (k, inertia) for every k tried.
    pub curve: Vec<(usize, f64)>,
    /// The fit at the chosen k.
    pub fit: KMeansFit,
}

/// Fits KMeans for each k in `k_min..=k_max` and picks the knee of the inertia curve.
pub fn elbow_select(points: ArrayView2<f64>, cfg: &ClusterConfig, root_seed: u64) -> Result<Elbow> {
    cfg.validate()?;
    if cfg.k_max > points.nrows() {
        return Err(Error::Argument(format!(
            "k_max={} exceeds the number of points {}",
            cfg.k_max,
            points.nrows()
        )));
    }
    let mut fits = Vec::new();
    for k in cfg.k_min..=cfg.k_max {
        fits.push((k, kmeans_fit(points, k, cfg, root_seed)?));
    }
    let xs: Vec<f64> = fits.iter().map(|(k, _)| *k as f64).collect();
    let ys: Vec<f64> = fits.iter().map(|(_, f)| f.inertia).collect();
    let idx = knee_of_curve(&xs, &ys).unwrap_or_else(|| {
        warn!("inertia curve has no knee; falling back to k={}", cfg.k_min);
        0
    });
    let curve = fits.iter().map(|(k, f)| (*k, f.inertia)).collect();
    let (k, fit) = fits.swap_remove(idx);
    Ok(Elbow { k, curve, fit })
}

/// Cluster prototypes stored as the columns of a D×k matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeMatrix {
    prototypes: Array2<f64>,
    temperature: f64,
}

impl PrototypeMatrix {
    /// `columns` is D×k.
    pub fn new(columns: Array2<f64>, temperature: f64) -> Result<Self> {
        if columns.ncols() < 2 {
            return Err(Error::Argument(format!("need at least 2 prototypes, got {}", columns.ncols())));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("prototypes must be finite".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Argument(format!("assignment temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            prototypes: columns,
            temperature,
        })
    }

    /// From k×D centroids as returned by [`kmeans_fit`].
    pub fn from_centroids(centroids: &Array2<f64>, temperature: f64) -> Result<Self> {
        Self::new(centroids.t().to_owned(), temperature)
    }

    pub fn k(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn columns(&self) -> &Array2<f64> {
        &self.prototypes
    }

    pub fn prototype(&self, j: usize) -> Vec<f64> {
        self.prototypes.column(j).to_vec()
    }

    fn check(&self, h: ArrayView2<f64>) -> Result<()> {
        if h.ncols() != self.dim() {
            return Err(Error::Argument(format!(
                "latent width {} does not match prototype width {}",
                h.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// B×k cosine similarities.
    pub fn similarities(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(h)?;
        let protos: Vec<Vec<f64>> = (0..self.k()).map(|j| self.prototype(j)).collect();
        let mut out = Array2::zeros((h.nrows(), self.k()));
        for (mut row, hr) in out.outer_iter_mut().zip(h.outer_iter()) {
            let hr = hr.to_vec();
            for (j, p) in protos.iter().enumerate() {
                row[j] = cosine_sim(&hr, p);
            }
        }
        Ok(out)
    }

    /// Temperature-scaled softmax of cosine similarities, one row per latent.
    pub fn soft_assign(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut s = self.similarities(h)?;
        for mut row in s.axis_iter_mut(Axis(0)) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| ((v - max) / self.temperature).exp());
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        Ok(s)
    }

    /// Index of the most similar prototype; ties go to the lowest index.
    pub fn hard_label(&self, h: ArrayView2<f64>) -> Result<Vec<usize>> {
        let s = self.similarities(h)?;
        Ok(s
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
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_two_similarities() {
        // prototypes e1, e2; h = e1 gives similarities [1, 0]
        let p = PrototypeMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], 1.0).unwrap();
        let s = p.soft_assign(array![[1.0, 0.0]].view()).unwrap();
        let e = std::f64::consts::E;
        assert!((s[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((s[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = PrototypeMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], 0.1).unwrap();
        assert_eq!(p.hard_label(array![[1.0, 1.0], [0.0, 2.0]].view()).unwrap(), vec![0, 1]);
        let u = p.soft_assign(array![[1.0, 1.0]].view()).unwrap();
        assert!((u[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_points_collapse() {
        let pts = Array2::from_shape_fn((5, 3), |(_, j)| j as f64);
        let fit = kmeans_fit(pts.view(), 3, &ClusterConfig::default(), 1).unwrap();
        assert_eq!(fit.inertia, 0.0);
        for c in fit.centroids.outer_iter() {
            assert_eq!(c.to_vec(), vec![0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = Array2::<f64>::zeros((2, 3));
        assert!(kmeans_fit(pts.view(), 3, &ClusterConfig::default(), 0).is_err());
    }

    #[test]
    fn straight_line_has_no_knee() {
        let xs: Vec<f64> = (2..=12).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 100.0 - 5.0 * x).collect();
        assert_eq!(knee_of_curve(&xs, &ys), None);
    }

    #[test]
    fn knee_of_hinge() {
        let xs: Vec<f64> = (2..=12).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x <= 4.0 { 100.0 - 40.0 * (x - 2.0) } else { 20.0 - (x - 4.0) }).collect();
        assert_eq!(knee_of_curve(&xs, &ys), Some(2));
    }
}
