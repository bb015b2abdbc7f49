//! IDX parsing, datasets and shuffled mini-batches.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const DATA_DIR_ENV: &str = "VMI_DATA_DIR";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("wrong magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("wrong image dimensions {rows}x{cols}, expected 28x28")]
    WrongDimensions { rows: u32, cols: u32 },
    #[error("label {value} at index {index} outside 0..=9")]
    LabelRange { index: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("unknown dataset {0:?} (expected mnist or fashion-mnist)")]
    UnknownDataset(String),
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Header of an IDX file: magic number and big-endian `u32` dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn byte_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.magic.to_be_bytes().to_vec();
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    /// Reads the magic and the number of dimensions encoded in its low byte.
    pub fn parse(bytes: &[u8]) -> Result<Self, DataError> {
        let magic = read_u32(bytes, 0)?;
        let ndim = (magic & 0xff) as usize;
        let dims = (0..ndim)
            .map(|i| read_u32(bytes, 4 + 4 * i))
            .collect::<Result<_, _>>()?;
        Ok(Self { magic, dims })
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::WrongMagic { expected, found });
    }
    Ok(())
}

/// `[N × 784]` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor, DataError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let header = IdxHeader::parse(bytes)?;
    let (n, rows, cols) = (header.dims[0], header.dims[1], header.dims[2]);
    if rows as usize != SIDE || cols as usize != SIDE {
        return Err(DataError::WrongDimensions { rows, cols });
    }
    let start = header.byte_len();
    let pixels = n as usize * SIDE * SIDE;
    let payload = bytes.get(start..start + pixels).ok_or(DataError::Truncated {
        expected: start + pixels,
        actual: bytes.len(),
    })?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![n as usize, SIDE * SIDE], data).expect("length matches header"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let header = IdxHeader::parse(bytes)?;
    let n = header.dims[0] as usize;
    let start = header.byte_len();
    let payload = bytes.get(start..start + n).ok_or(DataError::Truncated {
        expected: start + n,
        actual: bytes.len(),
    })?;
    if let Some((index, &value)) = payload.iter().enumerate().find(|(_, &v)| v > 9) {
        return Err(DataError::LabelRange { index, value });
    }
    Ok(payload.to_vec())
}

/// Serializes images (values in `[0,1]`, rounded to bytes) as an IDX3 file.
pub fn encode_idx_images(images: &Tensor) -> Vec<u8> {
    let header = IdxHeader {
        magic: IMAGES_MAGIC,
        dims: vec![images.rows() as u32, SIDE as u32, SIDE as u32],
    };
    let mut out = header.to_bytes();
    out.extend(
        images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let header = IdxHeader {
        magic: LABELS_MAGIC,
        dims: vec![labels.len() as u32],
    };
    let mut out = header.to_bytes();
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
}

impl DatasetKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::FashionMnist => "fashion-mnist",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "fashion-mnist" | "fashion" | "fashionmnist" => Ok(Self::FashionMnist),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "t10k",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(DataError::UnknownDataset(format!("split {other}"))),
        }
    }
}

/// Images in `[0,1]` with their digit/class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, name: impl Into<String>) -> Result<Self, DataError> {
        if images.rows() != labels.len() || images.shape().len() != 2 {
            return Err(DataError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            images,
            labels,
            name: name.into(),
        })
    }

    pub fn from_idx(images: &[u8], labels: &[u8], name: impl Into<String>) -> Result<Self, DataError> {
        Self::new(parse_idx_images(images)?, parse_idx_labels(labels)?, name)
    }

    /// Loads `<root>/<dataset>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
    pub fn load(root: &Path, kind: DatasetKind, split: Split) -> Result<Self, DataError> {
        let dir = root.join(kind.dir_name());
        let read = |suffix: &str| {
            let path = dir.join(format!("{}-{suffix}", split.prefix()));
            std::fs::read(&path).map_err(|e| DataError::Read {
                path,
                message: e.to_string(),
            })
        };
        let images = read("images-idx3-ubyte")?;
        let labels = read("labels-idx1-ubyte")?;
        Self::from_idx(&images, &labels, format!("{kind}-{split}"))
    }

    /// Resolves the data root from an explicit path or `VMI_DATA_DIR`.
    pub fn data_root(explicit: Option<&Path>) -> Option<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        self.images.gather_rows(indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn mean_pixel(&self) -> f64 {
        self.images.mean()
    }
}

/// A shuffled epoch of index batches. The final short batch is kept.
pub fn batch_iterator(len: usize, batch_size: usize, rng: &mut Rng) -> impl Iterator<Item = Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_file(n: u32, pixel: u8) -> Vec<u8> {
        let mut bytes = IdxHeader {
            magic: IMAGES_MAGIC,
            dims: vec![n, 28, 28],
        }
        .to_bytes();
        bytes.extend(std::iter::repeat_n(pixel, n as usize * 784));
        bytes
    }

    #[test]
    fn pixel_normalization_endpoints() {
        assert!(parse_idx_images(&images_file(2, 255))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(parse_idx_images(&images_file(1, 0))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn labels_magic_in_image_slot() {
        let bytes = encode_idx_labels(&[1, 2]);
        assert_eq!(
            parse_idx_images(&bytes).unwrap_err(),
            DataError::WrongMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC
            }
        );
    }

    #[test]
    fn distinct_errors() {
        let mut truncated = images_file(3, 7);
        truncated.truncate(truncated.len() - 1);
        assert!(matches!(parse_idx_images(&truncated), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(DataError::Truncated { .. })));

        let mut wrong = IdxHeader {
            magic: IMAGES_MAGIC,
            dims: vec![1, 32, 32],
        }
        .to_bytes();
        wrong.extend(vec![0u8; 1024]);
        assert_eq!(
            parse_idx_images(&wrong).unwrap_err(),
            DataError::WrongDimensions { rows: 32, cols: 32 }
        );
    }

    #[test]
    fn empty_label_file_accepted() {
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[])).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn label_out_of_range() {
        let err = parse_idx_labels(&encode_idx_labels(&[3, 10, 2])).unwrap_err();
        assert_eq!(err, DataError::LabelRange { index: 1, value: 10 });
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let sizes: Vec<usize> = batch_iterator(5, 2, &mut Rng::seed_from(0)).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn batches_cover_each_index_once() {
        let mut seen: Vec<usize> = batch_iterator(103, 10, &mut Rng::seed_from(4)).flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn equal_seed_equal_order() {
        let a: Vec<_> = batch_iterator(50, 8, &mut Rng::seed_from(9)).collect();
        let b: Vec<_> = batch_iterator(50, 8, &mut Rng::seed_from(9)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn count_mismatch_rejected() {
        let images = parse_idx_images(&images_file(2, 1)).unwrap();
        assert!(matches!(
            Dataset::new(images, vec![1], "x"),
            Err(DataError::CountMismatch { .. })
        ));
    }
}
