//! Dataset acquisition (checksummed cache), IDX and CIFAR-10 parsing, normalization to [0,1].

mod cifar;
mod fetch;
mod idx;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Dataset, NnError, Split};

pub use cifar::{load_cifar10, parse_cifar_batch, PIXELS as CIFAR_PIXELS, RECORD_LEN as CIFAR_RECORD_LEN};
pub use fetch::{default_cache_dir, fetch_dataset, manifest, FetchReport, Manifest, SourceSpec, CACHE_ENV, MIRROR_ENV};
pub use idx::{encode_idx, load_idx, parse_idx, IdxTensor, IMAGES_MAGIC, LABELS_MAGIC};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown dataset {0:?} (expected mnist, fashion_mnist or cifar10)")]
    UnknownDataset(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error for {file}: expected {expected}, got {actual}{}", quarantine_note(.quarantined))]
    Integrity { file: String, expected: String, actual: String, quarantined: Option<PathBuf> },
    #[error("network error fetching {url}: {message}")]
    Network { url: String, message: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] NnError),
}

fn quarantine_note(q: &Option<PathBuf>) -> String {
    q.as_ref().map(|p| format!(" (moved to {})", p.display())).unwrap_or_default()
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    /// Network failures may succeed on a later attempt; nothing else will.
    pub fn is_retryable(&self) -> bool {
        matches!(self, DataError::Network { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Mnist, DatasetName::FashionMnist, DatasetName::Cifar10];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
        }
    }

    /// `[channels, height, width]` of one sample.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            DatasetName::Mnist | DatasetName::FashionMnist => [1, 28, 28],
            DatasetName::Cifar10 => [3, 32, 32],
        }
    }

    pub fn classes(self) -> usize {
        10
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" | "fashion-mnist" => Ok(DatasetName::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

fn idx_split(dir: &Path, prefix: &str, split: Split) -> Result<Dataset, DataError> {
    let images = load_idx(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = load_idx(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if images.dims.len() != 3 || images.dims[1..] != [28, 28] {
        return Err(DataError::Format(format!("{prefix} images: expected N x 28 x 28, found {:?}", images.dims)));
    }
    if labels.dims.len() != 1 || labels.count() != images.count() {
        return Err(DataError::Format(format!(
            "{prefix}: {} labels for {} images",
            labels.count(),
            images.count()
        )));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(DataError::Format(format!("{prefix}: label {bad} outside 0..9")));
    }
    let inputs = Array2::from_shape_vec((images.count(), images.item_len()), images.data)
        .expect("dims checked")
        .mapv(|b| b as f32 / 255.0);
    Ok(Dataset::new(inputs, labels.data, 10, split)?)
}

/// Parses already-fetched files from `dir` into (train, test).
pub fn load_from_dir(name: DatasetName, dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    match name {
        DatasetName::Mnist | DatasetName::FashionMnist => {
            Ok((idx_split(dir, "train", Split::Train)?, idx_split(dir, "t10k", Split::Test)?))
        }
        DatasetName::Cifar10 => load_cifar10(dir),
    }
}

/// Fetches (or verifies the cached copy of) a dataset and parses it.
pub fn load_dataset(name: DatasetName, cache_dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let report = fetch_dataset(name, cache_dir)?;
    load_from_dir(name, &report.dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        for name in DatasetName::ALL {
            assert_eq!(name.as_str().parse::<DatasetName>().unwrap(), name);
        }
        assert!(matches!("imagenet".parse::<DatasetName>(), Err(DataError::UnknownDataset(_))));
    }

    #[test]
    fn idx_directory_loads_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        for (prefix, n) in [("train", 3usize), ("t10k", 2)] {
            let pixels: Vec<u8> = (0..n * 784).map(|i| (i % 256) as u8).collect();
            std::fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&[n, 28, 28], &pixels))
                .unwrap();
            let labels: Vec<u8> = (0..n as u8).collect();
            std::fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&[n], &labels)).unwrap();
        }
        let (train, test) = load_from_dir(DatasetName::Mnist, dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (3, 2));
        assert_eq!(train.features(), 784);
        assert_eq!(train.inputs()[[0, 255]], 1.0);
        assert_eq!(train.inputs()[[0, 0]], 0.0);
        assert_eq!(test.split(), Split::Test);
    }

    #[test]
    fn label_count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        for prefix in ["train", "t10k"] {
            std::fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&[2, 28, 28], &[0; 1568]))
                .unwrap();
            std::fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&[1], &[0])).unwrap();
        }
        assert!(matches!(load_from_dir(DatasetName::Mnist, dir.path()), Err(DataError::Format(_))));
    }
}
