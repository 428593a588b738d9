//! Grayscale image datasets: MNIST IDX files and MedMNIST NPZ archives.
//!
//! Pixels are stored as `f32` in `[0, 1]` (raw byte / 255, no centering).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use contra_nncore::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other}"))),
        }
    }
}

/// Images (N×1×H×W, row-major) with one integer label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    pub class_count: usize,
}

impl Dataset {
    /// Checks every invariant and builds the dataset; `class_count` is
    /// raised to `max(label) + 1` and to at least 2.
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        height: usize,
        width: usize,
        split: Split,
        class_count: usize,
    ) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 || images.len() != labels.len() * pixels {
            return Err(Error::Consistency(format!(
                "{} pixels do not form {} images of {height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Consistency(format!("pixel value {v} outside [0,1]")));
        }
        let max_label = labels.iter().copied().max().unwrap_or(0);
        Ok(Self {
            images,
            labels,
            height,
            width,
            split,
            class_count: class_count.max(max_label + 1).max(2),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// Gathers the given samples into a B×1×H×W tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * self.pixels());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(&[indices.len(), 1, self.height, self.width], data).expect("batch shape")
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.batch(indices).into_data(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            height: self.height,
            width: self.width,
            split: self.split,
            class_count: self.class_count,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let got = read_u32_be(&mut r)?;
    if got != magic {
        return Err(Error::Format(format!(
            "{}: IDX magic {got:#010x}, expected {magic:#010x}",
            path.display()
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|_| read_u32_be(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut payload = vec![0u8; dims.iter().product()];
    r.read_exact(&mut payload)?;
    Ok((dims, payload))
}

/// Loads an IDX image file (magic `0x803`) and label file (magic `0x801`).
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images_path, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = read_idx(labels_path, IDX_LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            dims[0], ldims[0]
        )));
    }
    Dataset::new(
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        labels.iter().map(|&l| l as usize).collect(),
        dims[1],
        dims[2],
        split,
        2,
    )
}

/// Writes a dataset as an IDX image/label file pair, quantizing pixels to bytes.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), ds.height, ds.width] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(ds.images.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    File::create(images_path)?.write_all(&img)?;

    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let b = u8::try_from(l).map_err(|_| Error::Argument(format!("label {l} does not fit a byte")))?;
        lab.push(b);
    }
    File::create(labels_path)?.write_all(&lab)?;
    Ok(())
}

/// A decoded `.npy` array of bytes.
#[derive(Debug)]
struct NpyBytes {
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::Format(format!("npy header lacks {key}")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

/// Parses an NPY v1.0 array of `uint8` in C order.
fn parse_npy(bytes: &[u8]) -> Result<NpyBytes> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::Format("missing NPY magic".into()));
    }
    if (bytes[6], bytes[7]) != (1, 0) {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(
        bytes
            .get(10..10 + hlen)
            .ok_or_else(|| Error::Format("truncated NPY header".into()))?,
    )
    .map_err(|_| Error::Format("NPY header is not UTF-8".into()))?;

    let descr = header_value(header, "descr")?;
    let descr = descr.trim_start_matches(['\'', '"']);
    let descr = &descr[..descr.find(['\'', '"']).unwrap_or(descr.len())];
    if !matches!(descr, "|u1" | "u1" | "<u1" | ">u1" | "=u1") {
        return Err(Error::Format(format!("unsupported NPY dtype {descr}")));
    }
    if header_value(header, "fortran_order")?.starts_with("True") {
        return Err(Error::Format("Fortran-ordered NPY arrays are not supported".into()));
    }
    let shape_str = header_value(header, "shape")?;
    let open = shape_str
        .strip_prefix('(')
        .ok_or_else(|| Error::Format("malformed NPY shape".into()))?;
    let close = open
        .find(')')
        .ok_or_else(|| Error::Format("malformed NPY shape".into()))?;
    let shape = open[..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad NPY dimension {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let data = bytes
        .get(10 + hlen..10 + hlen + n)
        .ok_or_else(|| Error::Format("truncated NPY payload".into()))?
        .to_vec();
    Ok(NpyBytes { shape, data })
}

fn read_member(archive: &mut zip::ZipArchive<File>, stem: &str) -> Result<NpyBytes> {
    let name = [format!("{stem}.npy"), stem.to_string()]
        .into_iter()
        .find(|n| archive.index_for_name(n).is_some())
        .ok_or_else(|| Error::Format(format!("archive has no member {stem}")))?;
    let mut f = archive.by_name(&name)?;
    let mut buf = Vec::with_capacity(f.size() as usize);
    f.read_to_end(&mut buf)?;
    parse_npy(&buf)
}

/// Loads `<split>_images` / `<split>_labels` from a MedMNIST-style `.npz` archive.
pub fn load_medmnist_npz(path: &Path, split: Split) -> Result<Dataset> {
    let mut archive = zip::ZipArchive::new(File::open(path)?)?;
    let images = read_member(&mut archive, &format!("{split}_images"))?;
    let labels = read_member(&mut archive, &format!("{split}_labels"))?;

    let (n, h, w) = match images.shape[..] {
        [n, h, w] | [n, h, w, 1] | [n, 1, h, w] => (n, h, w),
        _ => {
            return Err(Error::Format(format!(
                "expected grayscale images N×H×W, got shape {:?}",
                images.shape
            )))
        }
    };
    match labels.shape[..] {
        [m] | [m, 1] if m == n => {}
        [m] | [m, 1] => {
            return Err(Error::Consistency(format!("{n} images but {m} labels")));
        }
        _ => {
            return Err(Error::Format(format!(
                "labels must have shape (N,) or (N,1), got {:?}",
                labels.shape
            )))
        }
    }
    Dataset::new(
        images.data.iter().map(|&b| b as f32 / 255.0).collect(),
        labels.data.iter().map(|&l| l as usize).collect(),
        h,
        w,
        split,
        2,
    )
}

/// Indices of a seeded sample without replacement of `round(fraction · len)` items.
pub fn subset_indices(len: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("fraction {fraction} not in (0,1]")));
    }
    let n = (fraction * len as f64).round() as usize;
    if n == 0 {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {len} samples is empty"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut seed::rng(seed, "subset", 0));
    idx.truncate(n);
    Ok(idx)
}

pub fn subset(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    Ok(ds.select(&subset_indices(ds.len(), fraction, seed)?))
}
