//! NT-Xent contrastive loss, mean squared reconstruction error and their
//! weighted sum.

use contra_nncore::{Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to vector norms before dividing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) || !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// Cosine similarity with `NORM_EPS` added to both norms.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / ((na + NORM_EPS) * (nb + NORM_EPS))
}

/// Rows of `z` scaled to unit length, plus the original norms.
fn normalize_rows(z: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = z.to_vec();
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = &mut u[i * d..(i + 1) * d];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms[i] = norm;
        row.iter_mut().for_each(|x| *x /= norm + NORM_EPS);
    }
    (u, norms)
}

/// NT-Xent value and gradient for stacked views: rows `0..B` are the first
/// view, rows `B..2B` the second, and row `i` is paired with row `(i + B) mod 2B`.
fn ntxent_raw(z: &[f64], two_b: usize, d: usize, tau: f64) -> (f64, Vec<f64>) {
    let b = two_b / 2;
    let (u, norms) = normalize_rows(z, two_b, d);
    let mut sim = vec![0.0; two_b * two_b];
    for i in 0..two_b {
        for j in i..two_b {
            let s: f64 = u[i * d..(i + 1) * d].iter().zip(&u[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
            sim[i * two_b + j] = s / tau;
            sim[j * two_b + i] = s / tau;
        }
    }

    // coef[i][k] = dL/dsim[i][k] (sim already divided by tau)
    let scale = 1.0 / two_b as f64;
    let mut loss = 0.0;
    let mut coef = vec![0.0; two_b * two_b];
    for i in 0..two_b {
        let pos = (i + b) % two_b;
        let row = &sim[i * two_b..(i + 1) * two_b];
        let max = (0..two_b).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..two_b).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        loss += max + denom.ln() - row[pos];
        for k in (0..two_b).filter(|&k| k != i) {
            coef[i * two_b + k] = scale * (row[k] - max).exp() / denom;
        }
        coef[i * two_b + pos] -= scale;
    }

    // through the similarity matrix to the unit rows
    let mut gu = vec![0.0; two_b * d];
    for i in 0..two_b {
        for k in 0..two_b {
            let c = (coef[i * two_b + k] + coef[k * two_b + i]) / tau;
            if c != 0.0 {
                for t in 0..d {
                    gu[i * d + t] += c * u[k * d + t];
                }
            }
        }
    }

    // through the row normalisation
    let mut gz = vec![0.0; two_b * d];
    for i in 0..two_b {
        let n = norms[i];
        let zi = &z[i * d..(i + 1) * d];
        let gi = &gu[i * d..(i + 1) * d];
        let dot: f64 = zi.iter().zip(gi).map(|(a, b)| a * b).sum();
        let radial = if n > 0.0 { dot / (n * (n + NORM_EPS).powi(2)) } else { 0.0 };
        for t in 0..d {
            gz[i * d + t] = gi[t] / (n + NORM_EPS) - zi[t] * radial;
        }
    }
    (loss * scale, gz)
}

/// NT-Xent over stacked views `z` (2B×D), mean over all 2B anchors.
///
/// The denominator of each anchor runs over every other row, the positive
/// included, so the loss is non-negative and exactly zero when B = 1.
pub fn ntxent_stacked<T: Real>(tape: &Tape<T>, z: Var, temperature: f64) -> Result<Var> {
    let zv = tape.value(z);
    let (two_b, d) = zv.dims2()?;
    if two_b == 0 || two_b % 2 != 0 {
        return Err(Error::Argument(format!("ntxent needs 2B rows with B >= 1, got {two_b}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {temperature}")));
    }
    let z64: Vec<f64> = zv.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let (loss, grad) = ntxent_raw(&z64, two_b, d, temperature);
    let shape = zv.shape().to_vec();
    let grad = Tensor::new(&shape, grad.into_iter().map(T::of).collect())?;
    Ok(tape.custom(
        &[z],
        Tensor::scalar(T::of(loss)),
        Box::new(move |g, _| {
            let s = g.data()[0];
            vec![Some(grad.map(|v| v * s))]
        }),
    ))
}

/// NT-Xent for two B×D views.
pub fn ntxent<T: Real>(tape: &Tape<T>, z1: Var, z2: Var, temperature: f64) -> Result<Var> {
    if tape.shape(z1) != tape.shape(z2) {
        return Err(Error::Argument(format!(
            "views differ in shape: {:?} vs {:?}",
            tape.shape(z1),
            tape.shape(z2)
        )));
    }
    let z = tape.concat_rows(z1, z2)?;
    ntxent_stacked(tape, z, temperature)
}

/// Mean of `(x - y)^2` over all elements.
pub fn mse<T: Real>(tape: &Tape<T>, x: Var, y: Var) -> Result<Var> {
    let (xv, yv) = (tape.value(x), tape.value(y));
    xv.expect_same_shape(&yv)?;
    if xv.is_empty() {
        return Err(Error::Argument("mse of empty tensors".into()));
    }
    let n = T::of(xv.len() as f64);
    let diff = xv.zip_map(&yv, |a, b| a - b)?;
    let value = diff.data().iter().fold(T::zero(), |acc, &d| acc + d * d) / n;
    Ok(tape.custom(
        &[x, y],
        Tensor::scalar(value),
        Box::new(move |g, mask| {
            let s = g.data()[0] * T::of(2.0) / n;
            let gx = diff.map(|d| d * s);
            let gy = mask[1].then(|| gx.map(|v| -v));
            vec![mask[0].then_some(gx), gy]
        }),
    ))
}

/// `ntxent(z1, z2) + alpha * (mse(x1, y1) + mse(x2, y2))`.
#[allow(clippy::too_many_arguments)]
pub fn combined<T: Real>(
    tape: &Tape<T>,
    z1: Var,
    z2: Var,
    x1: Var,
    y1: Var,
    x2: Var,
    y2: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let c = ntxent(tape, z1, z2, cfg.temperature)?;
    let r = tape.add(mse(tape, x1, y1)?, mse(tape, x2, y2)?)?;
    Ok(tape.add(c, tape.scale(r, T::of(cfg.alpha)))?)
}
