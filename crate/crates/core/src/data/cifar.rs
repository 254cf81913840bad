//! CIFAR-10 binary batches: records of one label byte followed by 3072 channel-major pixels.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::DataError;
use crate::nn::{Dataset, Split};

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3 * 32 * 32;
pub const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const TEST_FILE: &str = "test_batch.bin";

/// Raw pixels (one row per record) and labels.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
        return Err(DataError::Format(format!(
            "cifar10: {} bytes is not a positive multiple of {RECORD_LEN}",
            bytes.len()
        )));
    }
    let records = bytes.len() / RECORD_LEN;
    let mut pixels = Vec::with_capacity(records * PIXELS);
    let mut labels = Vec::with_capacity(records);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(DataError::Format(format!("cifar10: record {i} has label {}", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

fn batch_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_files(dir: &Path, files: &[&str], split: Split) -> Result<Dataset, DataError> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        let (p, l) = parse_cifar_batch(&bytes)
            .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
        pixels.extend(p);
        labels.extend(l);
    }
    let inputs = Array2::from_shape_vec((labels.len(), PIXELS), pixels)
        .expect("record layout")
        .mapv(|b| b as f32 / 255.0);
    Ok(Dataset::new(inputs, labels, 10, split)?)
}

/// Train (the five data batches) and test splits.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let dir = batch_dir(dir);
    Ok((load_files(&dir, &TRAIN_FILES, Split::Train)?, load_files(&dir, &[TEST_FILE], Split::Test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXELS));
        r
    }

    #[test]
    fn records_split_into_label_and_pixels() {
        let bytes = [record(3, 10), record(9, 255)].concat();
        let (pixels, labels) = parse_cifar_batch(&bytes).unwrap();
        assert_eq!(labels, vec![3, 9]);
        assert_eq!(pixels.len(), 2 * PIXELS);
        assert_eq!(pixels[PIXELS], 255);
    }

    #[test]
    fn bad_sizes_and_labels_rejected() {
        let rec = record(1, 0);
        assert!(matches!(parse_cifar_batch(&rec[..RECORD_LEN - 1]), Err(DataError::Format(_))));
        assert!(matches!(parse_cifar_batch(&[]), Err(DataError::Format(_))));
        assert!(matches!(parse_cifar_batch(&record(10, 0)), Err(DataError::Format(_))));
    }

    #[test]
    fn directory_load_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        for name in TRAIN_FILES {
            std::fs::write(dir.path().join(name), [record(0, 0), record(1, 51)].concat()).unwrap();
        }
        std::fs::write(dir.path().join(TEST_FILE), record(2, 255)).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(test.len(), 1);
        assert_eq!(train.inputs()[[1, 0]], 0.2);
        assert_eq!(test.inputs()[[0, PIXELS - 1]], 1.0);
    }
}
