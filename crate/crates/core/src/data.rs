//! MNIST IDX parsing, datasets, splits and mini-batch order.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for images,
//! `0x00000801` for labels), one 4-byte count per dimension, then the payload
//! as unsigned bytes. Pixels are scaled by `1/255` into `[0, 1]`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(format!("IDX header truncated at byte {at}")),
    }
}

fn header(bytes: &[u8], magic: u32, ndims: usize, what: &str) -> Result<Vec<usize>> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return format_err(format!("{what}: bad magic {found:#010x}, expected {magic:#010x}"));
    }
    let dims = (0..ndims).map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return format_err(format!("{what}: zero-sized dimension in header {dims:?}"));
    }
    let payload = bytes.len() - (4 + 4 * ndims);
    let expected: usize = dims.iter().product();
    if payload != expected {
        return format_err(format!("{what}: header {dims:?} needs {expected} payload bytes, found {payload}"));
    }
    Ok(dims)
}

/// Parses an IDX image file into `(N, 1, rows, cols)` with values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor4> {
    let dims = header(bytes, IMAGES_MAGIC, 3, "images")?;
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor4::from_vec((dims[0], 1, dims[1], dims[2]), data)
}

/// Parses an IDX label file; every label must be a digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    header(bytes, LABELS_MAGIC, 1, "labels")?;
    bytes[8..]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if usize::from(b) < NUM_CLASSES {
                Ok(usize::from(b))
            } else {
                Err(Error::Data(format!("label {b} at index {i} is not a digit")))
            }
        })
        .collect()
}

/// Serializes single-channel images, rounding each value to the nearest byte.
pub fn encode_idx_images(images: &Tensor4) -> Result<Vec<u8>> {
    let d = images.dims();
    if d.channels != 1 {
        return Err(Error::Shape(format!("IDX images are single-channel, got {d}")));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for n in [d.batch, d.height, d.width] {
        out.extend_from_slice(&(n as u32).to_be_bytes());
    }
    out.extend(images.as_slice().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l >= NUM_CLASSES {
            return Err(Error::Data(format!("label {l} is not a digit")));
        }
        out.push(l as u8);
    }
    Ok(out)
}

/// Images with one digit label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor4,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>) -> Result<Self> {
        if images.dims().batch != labels.len() {
            return Err(Error::Data(format!("{} images but {} labels", images.dims().batch, labels.len())));
        }
        if let Some(v) = images.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Data(format!("label {l} is not a digit")));
        }
        Ok(Dataset { images, labels })
    }

    pub fn images(&self) -> &Tensor4 {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> Dims {
        self.images.dims().with_batch(1)
    }

    /// Copies the listed examples, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.gather_items(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset { images, labels })
    }

    /// The first `n` examples (all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Splits off the last `n` examples: returns `(front, tail)`.
    pub fn split_tail(self, n: usize) -> Result<(Dataset, Dataset)> {
        let total = self.len();
        if n == 0 || n >= total {
            return Err(Error::Config(format!("cannot hold out {n} of {total} examples; need 0 < n < {total}")));
        }
        let keep = total - n;
        let dims = self.images.dims();
        let mut front = self.images.into_vec();
        let back = front.split_off(keep * dims.item_len());
        let mut labels = self.labels;
        let tail_labels = labels.split_off(keep);
        Ok((
            Dataset { images: Tensor4::from_vec(dims.with_batch(keep), front)?, labels },
            Dataset { images: Tensor4::from_vec(dims.with_batch(n), back)?, labels: tail_labels },
        ))
    }
}

/// Seeded per-epoch shuffles of a training set into mini-batches.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    examples: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchPlan {
    pub fn new(examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if examples == 0 || batch_size == 0 {
            return Err(Error::Config("batch plan needs examples and a positive batch size".into()));
        }
        Ok(BatchPlan { examples, batch_size, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.examples.div_ceil(self.batch_size)
    }

    /// Example indices of every batch in `epoch` (0-based). The final batch
    /// may be short.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.examples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Training examples, held-out validation examples and the batch order.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub batches: BatchPlan,
}

/// Holds out the last `val_size` examples (before any shuffling) and plans
/// seeded mini-batches over the rest.
pub fn split_and_batch(train: Dataset, val_size: usize, batch_size: usize, seed: u64) -> Result<Split> {
    if val_size >= train.len() {
        return Err(Error::Config(format!(
            "validation size {val_size} must be smaller than the {} training examples",
            train.len()
        )));
    }
    let (train, val) = train.split_tail(val_size)?;
    let batches = BatchPlan::new(train.len(), batch_size, seed)?;
    Ok(Split { train, val, batches })
}

/// Reads `dir/name`, or `dir/name.gz` decompressed.
pub fn read_idx_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(fs::read(plain)?);
    }
    let gz: PathBuf = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        let mut out = Vec::new();
        GzDecoder::new(fs::File::open(gz)?).read_to_end(&mut out)?;
        return Ok(out);
    }
    Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} (or .gz) not found", plain.display()))))
}

/// The standard MNIST training and test sets.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let load = |images: &str, labels: &str| -> Result<Dataset> {
        let x = parse_idx_images(&read_idx_file(dir, images)?)?;
        let y = parse_idx_labels(&read_idx_file(dir, labels)?)?;
        Dataset::new(x, y)
    };
    Ok(Mnist { train: load(TRAIN_IMAGES, TRAIN_LABELS)?, test: load(TEST_IMAGES, TEST_LABELS)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, h: u32, w: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, h, w] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn parses_tiny_image_file() {
        let t = parse_idx_images(&idx_images(1, 2, 2, &[0, 128, 255, 64])).unwrap();
        assert_eq!(t.dims(), Dims::new(1, 1, 2, 2));
        assert_eq!(t.as_slice(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn image_format_errors() {
        let mut wrong = idx_images(1, 2, 2, &[0; 4]);
        wrong[3] = 0x01;
        assert!(matches!(parse_idx_images(&wrong), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&idx_images(0, 2, 2, &[])), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&idx_images(2, 2, 2, &[0; 7])), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(Error::Format(_))));
    }

    #[test]
    fn labels() {
        let bytes = encode_idx_labels(&[7, 2, 1]).unwrap();
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![7, 2, 1]);

        let mut bad = bytes.clone();
        bad[9] = 10;
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Data(_))));

        let mut short = bytes.clone();
        short.pop();
        assert!(matches!(parse_idx_labels(&short), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(3);
        assert!(matches!(parse_idx_labels(&long), Err(Error::Format(_))));
    }

    #[test]
    fn split_sizes_and_order() {
        let n = 12;
        let images = Tensor4::from_vec((n, 1, 1, 1), (0..n).map(|i| i as f64 / 20.0).collect()).unwrap();
        let labels = (0..n).map(|i| i % 10).collect();
        let split = split_and_batch(Dataset::new(images, labels).unwrap(), 4, 3, 7).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 4);
        assert_eq!(split.val.labels(), &[8, 9, 0, 1]);
        assert_eq!(split.batches.batches_per_epoch(), 3);
        let e0 = split.batches.epoch_batches(0);
        assert_eq!(e0.len(), 3);
        assert_eq!(e0[2].len(), 2);
        assert_eq!(e0, split.batches.epoch_batches(0));
        assert_ne!(e0, split.batches.epoch_batches(1));
    }

    #[test]
    fn split_rejects_oversized_validation() {
        let d = Dataset::new(Tensor4::zeros((3, 1, 1, 1)).unwrap(), vec![0, 1, 2]).unwrap();
        assert!(matches!(split_and_batch(d.clone(), 3, 1, 0), Err(Error::Config(_))));
        assert!(matches!(split_and_batch(d, 5, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn dataset_validation() {
        let img = Tensor4::new_filled((2, 1, 1, 1), 0.5).unwrap();
        assert!(Dataset::new(img.clone(), vec![1]).is_err());
        assert!(Dataset::new(img.clone(), vec![1, 10]).is_err());
        assert!(Dataset::new(img.scale(3.0), vec![1, 2]).is_err());
        assert!(Dataset::new(img, vec![1, 2]).is_ok());
    }
}
