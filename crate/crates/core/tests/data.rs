use std::io::Write;
use std::path::Path;

use contra_cluster::data::{load_idx, load_medmnist_npz, subset, subset_indices, write_idx, Dataset, Split};
use contra_cluster::Error;
use proptest::prelude::*;
use tempfile::tempdir;

fn idx_images(n: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for d in [n, 28, 28] {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn write(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn four_image_idx_matches_bytes() {
    let dir = tempdir().unwrap();
    let pixels: Vec<u8> = (0..4 * 784).map(|i| ((i * 31 + 7) % 256) as u8).collect();
    let bytes = idx_images(4, &pixels);
    assert_eq!(bytes.len(), 16 + 4 * 784);
    write(&dir.path().join("img"), &bytes);
    write(&dir.path().join("lbl"), &idx_labels(&[3, 1, 4, 1]));

    let ds = load_idx(&dir.path().join("img"), &dir.path().join("lbl"), Split::Train).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.labels, vec![3, 1, 4, 1]);
    assert_eq!(ds.images[0], pixels[0] as f32 / 255.0);
    for (v, &b) in ds.images.iter().zip(&pixels) {
        assert_eq!(*v, b as f32 / 255.0);
    }
    assert_eq!((ds.height, ds.width), (28, 28));
}

#[test]
fn all_zero_idx() {
    let dir = tempdir().unwrap();
    write(&dir.path().join("img"), &idx_images(3, &[0; 3 * 784]));
    write(&dir.path().join("lbl"), &idx_labels(&[0, 0, 1]));
    let ds = load_idx(&dir.path().join("img"), &dir.path().join("lbl"), Split::Test).unwrap();
    assert!(ds.images.iter().all(|&v| v == 0.0));
}

#[test]
fn idx_count_mismatch_is_consistency_error() {
    let dir = tempdir().unwrap();
    write(&dir.path().join("img"), &idx_images(4, &[0; 4 * 784]));
    write(&dir.path().join("lbl"), &idx_labels(&[0, 1, 2, 3, 4]));
    let err = load_idx(&dir.path().join("img"), &dir.path().join("lbl"), Split::Train).unwrap_err();
    assert!(matches!(err, Error::Consistency(_)), "{err:?}");
}

#[test]
fn idx_bad_magic_and_truncation() {
    let dir = tempdir().unwrap();
    let mut bad = idx_images(1, &[0; 784]);
    bad[3] = 1;
    write(&dir.path().join("img"), &bad);
    write(&dir.path().join("lbl"), &idx_labels(&[0]));
    let err = load_idx(&dir.path().join("img"), &dir.path().join("lbl"), Split::Train).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err:?}");

    write(&dir.path().join("img"), &idx_images(2, &[0; 784]));
    write(&dir.path().join("lbl"), &idx_labels(&[0, 1]));
    let err = load_idx(&dir.path().join("img"), &dir.path().join("lbl"), Split::Train).unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err:?}");
}

/// Minimal NPY v1.0 writer for u8 arrays.
fn npy(shape: &[usize], data: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': {shape_txt}, }}");
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

fn npz(path: &Path, members: &[(&str, Vec<u8>)]) {
    let file = std::fs::File::create(path).unwrap();
    let mut zip = zip::ZipWriter::new(file);
    for (name, bytes) in members {
        let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
        zip.start_file(format!("{name}.npy"), opts).unwrap();
        zip.write_all(bytes).unwrap();
    }
    zip.finish().unwrap();
}

#[test]
fn npz_constant_images_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("pneumonia.npz");
    npz(
        &path,
        &[
            ("train_images", npy(&[3, 28, 28], &[255; 3 * 784])),
            ("train_labels", npy(&[3, 1], &[0, 1, 1])),
        ],
    );
    let ds = load_medmnist_npz(&path, Split::Train).unwrap();
    assert_eq!(ds.len(), 3);
    assert!(ds.images.iter().all(|&v| v == 1.0));
    assert_eq!(ds.labels, vec![0, 1, 1]);
    assert_eq!(ds.split, Split::Train);
}

#[test]
fn npz_missing_split_is_format_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("a.npz");
    npz(
        &path,
        &[
            ("train_images", npy(&[1, 28, 28], &[0; 784])),
            ("train_labels", npy(&[1], &[0])),
        ],
    );
    let err = load_medmnist_npz(&path, Split::Val).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err:?}");
}

#[test]
fn npz_multi_column_labels_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("a.npz");
    npz(
        &path,
        &[
            ("test_images", npy(&[2, 28, 28], &[0; 2 * 784])),
            ("test_labels", npy(&[2, 2], &[0, 1, 1, 0])),
        ],
    );
    assert!(load_medmnist_npz(&path, Split::Test).is_err());
}

#[test]
fn subset_sizes_and_determinism() {
    let ds = Dataset::new(vec![0.5; 1000 * 4], (0..1000).map(|i| i % 3).collect(), 2, 2, Split::Train, 3).unwrap();
    assert_eq!(subset(&ds, 0.2, 7).unwrap().len(), 200);
    let full = subset_indices(1000, 1.0, 3).unwrap();
    let mut sorted = full.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
    assert_eq!(subset_indices(1000, 0.2, 9).unwrap(), subset_indices(1000, 0.2, 9).unwrap());
    assert!(matches!(subset_indices(3, 0.1, 0), Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip(bytes in proptest::collection::vec(any::<u8>(), 784..=3 * 784), seed in any::<u64>()) {
        let n = bytes.len() / 784;
        let pixels: Vec<f32> = bytes[..n * 784].iter().map(|&b| b as f32 / 255.0).collect();
        let labels: Vec<usize> = (0..n).map(|i| (seed as usize + i) % 10).collect();
        let ds = Dataset::new(pixels, labels, 28, 28, Split::Train, 10).unwrap();
        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp, Split::Train).unwrap();
        prop_assert_eq!(&back.images, &ds.images);
        prop_assert_eq!(&back.labels, &ds.labels);
        // loading twice gives identical data
        prop_assert_eq!(load_idx(&ip, &lp, Split::Train).unwrap(), back);
    }

    #[test]
    fn subset_indices_are_unique_and_in_range(len in 1usize..500, frac in 0.01f64..=1.0, seed in any::<u64>()) {
        if let Ok(idx) = subset_indices(len, frac, seed) {
            let set: std::collections::BTreeSet<_> = idx.iter().copied().collect();
            prop_assert_eq!(set.len(), idx.len());
            prop_assert!(idx.iter().all(|&i| i < len));
        }
    }
}
