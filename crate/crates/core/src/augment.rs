//! Stochastic views for contrastive pairs.
//!
//! Five transforms, each applied independently with `apply_probability`, in a
//! fixed order: resized crop → rotation → horizontal flip → Gaussian blur →
//! Gaussian noise. Outputs keep the input size and are clamped to `[0, 1]`.

use contra_nncore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub apply_probability: f64,
    pub max_rotation_deg: f64,
    pub blur_sigma_range: (f64, f64),
    pub noise_std: f64,
    /// Fraction of the image area kept by a crop.
    pub crop_scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            apply_probability: 0.5,
            max_rotation_deg: 30.0,
            blur_sigma_range: (0.1, 2.0),
            noise_std: 0.05,
            crop_scale_range: (0.6, 1.0),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            apply_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c0, c1) = self.crop_scale_range;
        let (s0, s1) = self.blur_sigma_range;
        let ok = (0.0..=1.0).contains(&self.apply_probability)
            && self.max_rotation_deg >= 0.0
            && self.noise_std >= 0.0
            && c0 > 0.0
            && c0 <= c1
            && c1 <= 1.0
            && s0 >= 0.0
            && s0 <= s1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation config {self:?}")))
        }
    }
}

/// A single-channel image, row-major.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    pub data: &'a [f32],
    pub height: usize,
    pub width: usize,
}

impl<'a> ImageView<'a> {
    pub fn new(data: &'a [f32], height: usize, width: usize) -> Self {
        Self { data, height, width }
    }
}

/// Bilinear sample with zeros outside the frame.
fn sample(img: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            img[yy as usize * w + xx as usize] as f64
        }
    };
    let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x0 + 1.0) * (1.0 - fy) * fx
        + at(y0 + 1.0, x0) * fy * (1.0 - fx)
        + at(y0 + 1.0, x0 + 1.0) * fy * fx;
    v as f32
}

/// Rotates counter-clockwise (as displayed, rows pointing down) about the
/// image centre by `degrees`.
pub fn rotate(img: ImageView<'_>, degrees: f64) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse rotation: destination -> source
            let sx = dx * cos - dy * sin + cx;
            let sy = dx * sin + dy * cos + cy;
            out[y * w + x] = sample(img.data, h, w, sy, sx);
        }
    }
    out
}

pub fn hflip(img: ImageView<'_>) -> Vec<f32> {
    let mut out = img.data.to_vec();
    for row in out.chunks_mut(img.width) {
        row.reverse();
    }
    out
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel radius `ceil(3σ)`.
pub fn gaussian_blur(img: ImageView<'_>, sigma: f64) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    if sigma <= 0.0 {
        return img.data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * img.data[y * w + clamp(x as isize + k as isize - radius, w)] as f64)
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum::<f64>()
                / norm) as f32;
        }
    }
    out
}

/// Crops a square covering `scale` of the image area at (`top`, `left`) and
/// resizes it back to full size bilinearly.
pub fn resized_crop(img: ImageView<'_>, scale: f64, top_frac: f64, left_frac: f64) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    let side_h = (h as f64 * scale.sqrt()).clamp(1.0, h as f64);
    let side_w = (w as f64 * scale.sqrt()).clamp(1.0, w as f64);
    let top = (h as f64 - side_h) * top_frac;
    let left = (w as f64 - side_w) * left_frac;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // pixel centres of the output grid mapped into the crop window
            let sy = top + (y as f64 + 0.5) * side_h / h as f64 - 0.5;
            let sx = left + (x as f64 + 0.5) * side_w / w as f64 - 0.5;
            let sy = sy.clamp(0.0, h as f64 - 1.0);
            let sx = sx.clamp(0.0, w as f64 - 1.0);
            out[y * w + x] = sample(img.data, h, w, sy, sx);
        }
    }
    out
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies the transform chain to one image.
pub fn augment_once(img: ImageView<'_>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    let p = cfg.apply_probability;
    let mut cur = img.data.to_vec();
    if rng.random_bool(p) {
        let scale = uniform(rng, cfg.crop_scale_range);
        let (t, l) = (rng.random::<f64>(), rng.random::<f64>());
        cur = resized_crop(ImageView::new(&cur, h, w), scale, t, l);
    }
    if rng.random_bool(p) {
        let m = cfg.max_rotation_deg;
        let angle = if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        cur = rotate(ImageView::new(&cur, h, w), angle);
    }
    if rng.random_bool(p) {
        cur = hflip(ImageView::new(&cur, h, w));
    }
    if rng.random_bool(p) {
        let sigma = uniform(rng, cfg.blur_sigma_range);
        cur = gaussian_blur(ImageView::new(&cur, h, w), sigma);
    }
    if rng.random_bool(p) && cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("noise std is finite");
        for v in &mut cur {
            *v += normal.sample(rng) as f32;
        }
    }
    for v in &mut cur {
        *v = v.clamp(0.0, 1.0);
    }
    cur
}

/// The RNG for one (sample, view) of a batch: one ChaCha stream per pair.
pub fn view_rng(batch_seed: u64, sample: usize, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    rng.set_stream((sample * 2 + view) as u64);
    rng
}

/// Two independently augmented views of every image in a B×1×H×W batch.
pub fn augment_pair(x: &Tensor<f32>, cfg: &AugmentConfig, batch_seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (b, c, h, w) = x.dims4()?;
    if b == 0 || c != 1 {
        return Err(Error::Argument(format!(
            "augment_pair needs a nonempty single-channel batch, got {:?}",
            x.shape()
        )));
    }
    let mut views = [Vec::with_capacity(x.len()), Vec::with_capacity(x.len())];
    for i in 0..b {
        let img = ImageView {
            data: &x.data()[i * h * w..(i + 1) * h * w],
            height: h,
            width: w,
        };
        for (v, out) in views.iter_mut().enumerate() {
            out.extend(augment_once(img, cfg, &mut view_rng(batch_seed, i, v)));
        }
    }
    let [a, bv] = views;
    Ok((Tensor::new(x.shape(), a)?, Tensor::new(x.shape(), bv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: &[f32], n: usize) -> ImageView<'_> {
        ImageView {
            data,
            height: n,
            width: n,
        }
    }

    #[test]
    fn rotation_by_90_moves_pixel_to_rotated_coordinate() {
        // 28×28, centre (13.5, 13.5). Pixel at row 13, col 20 has offset
        // (dx, dy) = (6.5, -0.5). A counter-clockwise quarter turn maps it to
        // (dx, dy) = (-0.5, -6.5), i.e. row 7, col 13.
        let mut data = vec![0.0f32; 28 * 28];
        data[13 * 28 + 20] = 1.0;
        let out = rotate(img(&data, 28), 90.0);
        assert!((out[7 * 28 + 13] - 1.0).abs() < 1e-6);
        assert!((out.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn flip_is_an_involution() {
        let data: Vec<f32> = (0..16).map(|v| v as f32 / 16.0).collect();
        assert_eq!(hflip(img(&hflip(img(&data, 4)), 4)), data);
        assert_ne!(hflip(img(&data, 4)), data);
    }

    #[test]
    fn tiny_sigma_blur_is_identity() {
        let data: Vec<f32> = (0..49).map(|v| ((v * 37) % 11) as f32 / 11.0).collect();
        let out = gaussian_blur(img(&data, 7), 1e-4);
        let err = out.iter().zip(&data).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn full_scale_crop_is_identity() {
        let data: Vec<f32> = (0..49).map(|v| v as f32 / 49.0).collect();
        let out = resized_crop(img(&data, 7), 1.0, 0.3, 0.8);
        let err = out.iter().zip(&data).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn zero_probability_is_bit_identical() {
        let data: Vec<f32> = (0..784).map(|v| (v % 255) as f32 / 255.0).collect();
        let mut rng = view_rng(5, 0, 0);
        assert_eq!(augment_once(img(&data, 28), &AugmentConfig::identity(), &mut rng), data);
    }

    #[test]
    fn zero_noise_only_config_is_identity() {
        let data: Vec<f32> = (0..784).map(|v| (v % 255) as f32 / 255.0).collect();
        let cfg = AugmentConfig {
            apply_probability: 1.0,
            max_rotation_deg: 0.0,
            blur_sigma_range: (0.0, 0.0),
            noise_std: 0.0,
            crop_scale_range: (1.0, 1.0),
            seed: 0,
        };
        let out = augment_once(img(&data, 28), &cfg, &mut view_rng(1, 0, 0));
        // flip still fires; undo it
        assert_eq!(hflip(img(&out, 28)), data);
    }

    #[test]
    fn validate_rejects_bad_ranges() {
        let mut c = AugmentConfig::default();
        assert!(c.validate().is_ok());
        c.crop_scale_range = (0.0, 1.0);
        assert!(c.validate().is_err());
        c = AugmentConfig {
            apply_probability: 1.5,
            ..AugmentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
