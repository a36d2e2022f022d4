//! IDX-format MNIST ingestion.
//!
//! Image files: big-endian magic `0x00000803`, then count, rows and cols as
//! big-endian `u32`, then `count * rows * cols` pixel bytes. Label files:
//! magic `0x00000801`, a count, then one byte per label. Gzip-compressed
//! files are detected by their `1f 8b` header and inflated transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tasks::{TaskBatch, TaskKind};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major, row-major within an image.
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Format(format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, dims: &[usize]) -> Result<usize> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::Format(format!("declared dimensions {dims:?} overflow")))?;
    if bytes.len() < len {
        return Err(Error::Truncated {
            expected: len,
            actual: bytes.len(),
        });
    }
    if bytes.len() > len {
        return Err(Error::Format(format!(
            "{} trailing bytes after declared payload",
            bytes.len() - len
        )));
    }
    Ok(len - header)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    expect_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    payload(bytes, 16, &[count, rows, cols])?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    payload(bytes, 8, &[count])?;
    let labels = bytes[8..].to_vec();
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
        return Err(Error::Value(format!("label {l} at index {i} is not a digit")));
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    /// Intensities in `[0, 1]`, image-major.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Scales bytes to `[0, 1]` by dividing by 255.
pub fn normalize(raw: &RawImages, labels: Vec<u8>, split: Split) -> Result<MnistSet> {
    if raw.count != labels.len() {
        return Err(Error::shape(
            "normalize",
            format!("{} images vs {} labels", raw.count, labels.len()),
        ));
    }
    Ok(MnistSet {
        split,
        rows: raw.rows,
        cols: raw.cols,
        images: raw.pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        labels,
    })
}

impl MnistSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    /// Count of each digit.
    pub fn label_histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::param("empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::param(format!(
                "index {bad} out of range for {} images",
                self.len()
            )));
        }
        Ok(())
    }

    fn targets(&self, indices: &[usize]) -> Matrix {
        let mut t = Matrix::zeros(indices.len(), CLASSES);
        for (b, &i) in indices.iter().enumerate() {
            t[(b, self.labels[i] as usize)] = 1.0;
        }
        t
    }

    /// One pixel per step, row-major from the top-left corner.
    pub fn as_pixel_sequences(&self, indices: &[usize]) -> Result<TaskBatch> {
        self.check_indices(indices)?;
        let p = self.pixels_per_image();
        let inputs = (0..p)
            .map(|step| {
                let col: Vec<f64> = indices.iter().map(|&i| self.images[i * p + step]).collect();
                Matrix::from_vec(indices.len(), 1, col).expect("column length")
            })
            .collect();
        Ok(TaskBatch {
            kind: TaskKind::MnistSequence,
            inputs,
            targets: self.targets(indices),
        })
    }

    /// Whole images as flat row vectors, a single step.
    pub fn as_flat_vectors(&self, indices: &[usize]) -> Result<TaskBatch> {
        self.check_indices(indices)?;
        let p = self.pixels_per_image();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Ok(TaskBatch {
            kind: TaskKind::MnistFlat,
            inputs: vec![Matrix::from_vec(indices.len(), p, data)?],
            targets: self.targets(indices),
        })
    }
}

/// Reads a file, inflating it if it is gzip-compressed.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Loads `train-*` or `t10k-*` IDX files from `dir`.
pub fn load_split(dir: &Path, split: Split) -> Result<MnistSet> {
    let images = locate(dir, &format!("{}-images-idx3-ubyte", split.prefix()))?;
    let labels = locate(dir, &format!("{}-labels-idx1-ubyte", split.prefix()))?;
    let raw = parse_idx_images(&read_maybe_gz(&images)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(&labels)?)?;
    normalize(&raw, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn image_file(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        for d in [count, rows, cols] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..(count * rows * cols) as usize).map(fill));
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn two_images() {
        let bytes = image_file(2, 28, 28, |i| (i % 256) as u8);
        assert_eq!(bytes.len(), 16 + 1568);
        let raw = parse_idx_images(&bytes).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (2, 28, 28));
        assert_eq!(raw.pixels.len(), 1568);
    }

    #[test]
    fn label_magic_rejected_by_image_parser() {
        let mut bytes = image_file(1, 2, 2, |_| 0);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn short_payload() {
        let mut bytes = image_file(2, 28, 28, |_| 0);
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_idx_labels(&label_file(&[5, 0, 4])).unwrap(), vec![5, 0, 4]);
        assert!(matches!(parse_idx_labels(&label_file(&[1, 12])), Err(Error::Value(_))));
        assert!(parse_idx_labels(&label_file(&[])).unwrap().is_empty());
    }

    #[test]
    fn normalisation() {
        let raw = RawImages {
            count: 1,
            rows: 1,
            cols: 3,
            pixels: vec![0, 255, 128],
        };
        let set = normalize(&raw, vec![3], Split::Test).unwrap();
        assert_eq!(set.images[0], 0.0);
        assert_eq!(set.images[1], 1.0);
        assert!((set.images[2] - 0.50196).abs() < 1e-5);
    }

    fn toy_set() -> MnistSet {
        let raw = parse_idx_images(&image_file(3, 28, 28, |i| ((i * 7) % 256) as u8)).unwrap();
        let mut set = normalize(&raw, vec![1, 7, 3], Split::Train).unwrap();
        // second image all black
        let p = set.pixels_per_image();
        set.images[p..2 * p].iter_mut().for_each(|x| *x = 0.0);
        set
    }

    #[test]
    fn sequence_adapter() {
        let set = toy_set();
        let batch = set.as_pixel_sequences(&[0, 1]).unwrap();
        assert_eq!(batch.seq_len(), 784);
        assert!(batch.inputs.iter().all(|x| x[(1, 0)] == 0.0));
        let rebuilt: Vec<f64> = batch.inputs.iter().map(|x| x[(0, 0)]).collect();
        assert_eq!(rebuilt, set.image(0));
        assert_eq!(batch.targets.argmax_rows(), vec![1, 7]);
    }

    #[test]
    fn flat_adapter_matches_sequence() {
        let set = toy_set();
        let flat = set.as_flat_vectors(&[2, 1]).unwrap();
        let seq = set.as_pixel_sequences(&[2, 1]).unwrap();
        assert_eq!(flat.inputs.len(), 1);
        assert_eq!(flat.inputs[0].cols(), 784);
        for b in 0..2 {
            let from_seq: Vec<f64> = seq.inputs.iter().map(|x| x[(b, 0)]).collect();
            assert_eq!(flat.inputs[0].row(b), &from_seq[..]);
        }
        assert!(flat.inputs[0].row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_indices() {
        let set = toy_set();
        assert!(matches!(set.as_flat_vectors(&[3]), Err(Error::Parameter(_))));
        assert!(matches!(set.as_pixel_sequences(&[]), Err(Error::Parameter(_))));
    }
}
