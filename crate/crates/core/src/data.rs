//! MNIST in IDX format: parsing, normalization, shuffling and batching.
//!
//! IDX files are a big-endian 32-bit magic number (`0x00000803` for images,
//! `0x00000801` for labels), one big-endian 32-bit size per dimension, then
//! raw unsigned bytes. Gzip-wrapped files are detected by their header and
//! decompressed transparently.

use std::env;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SkanError};
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Environment variable naming the directory that holds the four MNIST files.
pub const MNIST_DIR_ENV: &str = "SKAN_MNIST_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

fn check_header(bytes: &[u8], magic: u32, header_len: usize, what: &str) -> Result<()> {
    if bytes.len() < 4 {
        return Err(SkanError::Length { expected: header_len, actual: bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(SkanError::Format(format!("bad {what} magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    if bytes.len() < header_len {
        return Err(SkanError::Length { expected: header_len, actual: bytes.len() });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_header(bytes, IMAGES_MAGIC, 16, "image")?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    if count == 0 {
        return Err(SkanError::EmptyDataset);
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(SkanError::Length { expected, actual: bytes.len() });
    }
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_header(bytes, LABELS_MAGIC, 8, "label")?;
    let count = be_u32(bytes, 4) as usize;
    if count == 0 {
        return Err(SkanError::EmptyDataset);
    }
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(SkanError::Length { expected, actual: bytes.len() });
    }
    let labels = bytes[8..].to_vec();
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(SkanError::Data(format!("label {bad} at index {i} is outside 0..=9")));
    }
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// `pixel / 255`, one flattened image per row.
pub fn normalize(images: &IdxImages) -> Matrix {
    let width = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Matrix::from_vec(images.count, width, data).expect("pixel count matches header")
}

/// Reads a file, gunzipping it if it starts with the gzip magic bytes.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Matrix,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u8>) -> Result<Self> {
        if images.rows() == 0 {
            return Err(SkanError::EmptyDataset);
        }
        if images.rows() != labels.len() {
            return Err(SkanError::Data(format!("{} images but {} labels", images.rows(), labels.len())));
        }
        if let Some(bad) = images.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SkanError::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(SkanError::Data(format!("label {bad} outside 0..=9")));
        }
        Ok(Dataset { images, labels })
    }

    pub fn from_idx_bytes(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Self> {
        let images = parse_idx_images(image_bytes)?;
        let labels = parse_idx_labels(label_bytes)?;
        Dataset::new(normalize(&images), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images.cols()
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch { x: self.images.select_rows(indices), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// The first `n` samples after a shuffle seeded by `seed`.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(SkanError::Config("subset size must be >= 1".into()));
        }
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let Batch { x, labels } = self.select(&order[..n]);
        Ok(Dataset { images: x, labels })
    }

    /// Contiguous chunks in stored order, for evaluation.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.select(&idx)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<u8>,
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled mini-batches covering every sample exactly once; the last batch may be short.
pub fn shuffled_batches(ds: &Dataset, batch: usize, seed: u64, epoch: u64) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch == 0 {
        return Err(SkanError::Config("batch size must be >= 1".into()));
    }
    let order = epoch_permutation(ds.len(), seed, epoch);
    Ok((0..ds.len()).step_by(batch).map(move |start| ds.select(&order[start..(start + batch).min(order.len())])))
}

#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

fn locate(dir: &Path, name: &str) -> Result<PathBuf> {
    for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(SkanError::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{name}[.gz] not found in {}", dir.display()),
    )))
}

fn load_split(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let image_bytes = read_maybe_gzip(&locate(dir, images)?)?;
    let label_bytes = read_maybe_gzip(&locate(dir, labels)?)?;
    let raw = parse_idx_images(&image_bytes)?;
    if (raw.rows, raw.cols) != (28, 28) {
        return Err(SkanError::Format(format!("MNIST images must be 28x28, got {}x{}", raw.rows, raw.cols)));
    }
    Dataset::new(normalize(&raw), parse_idx_labels(&label_bytes)?)
}

/// Loads the canonical 60k/10k split from the four standard file names.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    Ok(Mnist {
        train: load_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        test: load_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    })
}

pub fn mnist_dir_from_env() -> Option<PathBuf> {
    env::var_os(MNIST_DIR_ENV).map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn synthetic_images(count: usize) -> IdxImages {
        IdxImages { count, rows: 28, cols: 28, pixels: (0..count * 784).map(|i| (i * 7 % 256) as u8).collect() }
    }

    #[test]
    fn parses_hand_built_image_file() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..1568).map(|i| (i % 251) as u8));
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!((images.count, images.rows, images.cols), (2, 28, 28));
        assert_eq!(images.pixels.len(), 1568);
        assert_eq!(images.pixels[1567], (1567 % 251) as u8);
    }

    #[test]
    fn image_parser_rejects_label_magic() {
        let bytes = encode_idx_labels(&[1, 2, 3]);
        assert!(matches!(parse_idx_images(&bytes), Err(SkanError::Format(_))));
    }

    #[test]
    fn image_parser_rejects_truncated_payload() {
        let mut bytes = encode_idx_images(&synthetic_images(2));
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes), Err(SkanError::Length { .. })));
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(SkanError::Length { .. })));
    }

    #[test]
    fn parses_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 0, 5, 9];
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 5, 9]);
    }

    #[test]
    fn label_parser_errors() {
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 1, 0x0a]), Err(SkanError::Data(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 0]), Err(SkanError::EmptyDataset)));
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 3, 0, 0, 0, 1, 1]), Err(SkanError::Format(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 2, 1]), Err(SkanError::Length { .. })));
    }

    #[test]
    fn normalize_scales_to_unit_interval() {
        let images = IdxImages { count: 1, rows: 1, cols: 3, pixels: vec![255, 0, 128] };
        let m = normalize(&images);
        assert_eq!(m.as_slice()[0], 1.0);
        assert_eq!(m.as_slice()[1], 0.0);
        assert!((m.as_slice()[2] - 0.50196078).abs() < 1e-8);
    }

    #[test]
    fn gzip_files_are_read_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let plain = encode_idx_labels(&[3, 1, 4]);
        let path = dir.path().join("labels.gz");
        let mut enc = flate2::write::GzEncoder::new(fs::File::create(&path).unwrap(), flate2::Compression::default());
        enc.write_all(&plain).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_maybe_gzip(&path).unwrap(), plain);
    }

    #[test]
    fn load_mnist_finds_gzipped_files() {
        let dir = tempfile::tempdir().unwrap();
        let write_gz = |name: &str, bytes: &[u8]| {
            let f = fs::File::create(dir.path().join(format!("{name}.gz"))).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::fast());
            enc.write_all(bytes).unwrap();
            enc.finish().unwrap();
        };
        write_gz("train-images-idx3-ubyte", &encode_idx_images(&synthetic_images(3)));
        write_gz("train-labels-idx1-ubyte", &encode_idx_labels(&[1, 2, 3]));
        fs::write(dir.path().join("t10k-images-idx3-ubyte"), encode_idx_images(&synthetic_images(2))).unwrap();
        fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx_labels(&[9, 0])).unwrap();
        let mnist = load_mnist(dir.path()).unwrap();
        assert_eq!((mnist.train.len(), mnist.test.len()), (3, 2));
        assert_eq!(mnist.test.labels(), &[9, 0]);
        assert!(load_mnist(dir.path().join("missing")).is_err());
    }

    #[test]
    fn batch_sizes_cover_dataset() {
        let ds = Dataset::new(Matrix::from_fn(10, 2, |r, _| r as f64 / 10.0), vec![0; 10]).unwrap();
        let sizes: Vec<usize> = shuffled_batches(&ds, 4, 0, 0).unwrap().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(shuffled_batches(&ds, 0, 0, 0).is_err());
    }

    #[test]
    fn epoch_order_is_deterministic_and_epoch_dependent() {
        assert_eq!(epoch_permutation(1000, 7, 3), epoch_permutation(1000, 7, 3));
        assert_ne!(epoch_permutation(1000, 7, 3), epoch_permutation(1000, 7, 4));
        assert_ne!(epoch_permutation(1000, 7, 3), epoch_permutation(1000, 8, 3));
    }

    #[test]
    fn dataset_rejects_invalid_contents() {
        assert!(Dataset::new(Matrix::zeros(0, 4), vec![]).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 4), vec![1]).is_err());
        assert!(Dataset::new(Matrix::from_fn(1, 2, |_, _| 1.5), vec![1]).is_err());
        assert!(Dataset::new(Matrix::zeros(1, 2), vec![10]).is_err());
    }

    #[test]
    fn subset_is_seeded_and_sized() {
        let ds =
            Dataset::new(Matrix::from_fn(50, 1, |r, _| r as f64 / 50.0), (0..50).map(|i| (i % 10) as u8).collect())
                .unwrap();
        let a = ds.subset(20, 1).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, ds.subset(20, 1).unwrap());
        assert_ne!(a, ds.subset(20, 2).unwrap());
        assert_eq!(ds.subset(500, 1).unwrap().len(), 50);
        assert!(ds.subset(0, 1).is_err());
    }

    proptest! {
        #[test]
        fn idx_round_trip(count in 1usize..5, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let images = IdxImages { count, rows, cols, pixels };
            prop_assert_eq!(parse_idx_images(&encode_idx_images(&images)).unwrap(), images);
            let labels: Vec<u8> = (0..count).map(|i| ((seed >> i) % 10) as u8).collect();
            prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
        }

        #[test]
        fn every_index_once_per_epoch(n in 1usize..300, batch in 1usize..40, seed in any::<u64>(), epoch in 0u64..50) {
            let ds = Dataset::new(Matrix::from_fn(n, 1, |r, _| r as f64 / n as f64), vec![0; n]).unwrap();
            let mut seen = HashSet::new();
            let mut total = 0;
            for b in shuffled_batches(&ds, batch, seed, epoch).unwrap() {
                prop_assert!(b.labels.len() <= batch);
                for r in 0..b.x.rows() {
                    seen.insert((b.x.get(r, 0) * n as f64).round() as usize);
                    total += 1;
                }
            }
            prop_assert_eq!(total, n);
            prop_assert_eq!(seen.len(), n);
        }
    }
}
