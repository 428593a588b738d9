//! Synthetic stand-ins for MNIST so every example runs without downloads.
#![allow(dead_code)]

use contra_cluster::data::{Dataset, Split};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 28×28 bars, crosses and boxes at random offsets.
pub fn shapes(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        let (dy, dx): (i32, i32) = (rng.random_range(-3..=3), rng.random_range(-3..=3));
        for y in 0..28i32 {
            for x in 0..28i32 {
                let (u, v) = (y - 14 - dy, x - 14 - dx);
                let on = match class {
                    0 => u.abs() <= 1 && v.abs() <= 8,
                    1 => (u.abs() <= 1 || v.abs() <= 1) && u.abs() <= 8 && v.abs() <= 8,
                    _ => (u.abs() == 7 || v.abs() == 7) && u.abs() <= 7 && v.abs() <= 7,
                };
                let base = if on { 0.9 } else { 0.05 };
                images.push((base + rng.random_range(-0.05..0.05f32)).clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(images, labels, 28, 28, split, 3).expect("valid shapes dataset")
}

/// Isotropic Gaussian blobs in `dim` dimensions, `per` points each.
pub fn blobs(centers: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let means: Vec<Vec<f64>> = (0..centers).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let mut x = Array2::zeros((centers * per, dim));
    let mut labels = Vec::with_capacity(centers * per);
    for c in 0..centers {
        for i in 0..per {
            let row = c * per + i;
            for d in 0..dim {
                x[[row, d]] = means[c][d] + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    (x, labels)
}

pub fn ascii(img: &[f32], side: usize) -> String {
    let ramp = [' ', '.', ':', '+', '#'];
    img.chunks(side)
        .map(|row| row.iter().map(|&v| ramp[((v * 4.999) as usize).min(4)]).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}
