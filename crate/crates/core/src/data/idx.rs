//! IDX container: two zero bytes, a type byte (0x08 = unsigned byte), a dimension count,
//! big-endian u32 dimensions, then the payload.

use std::path::Path;

use super::DataError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Bytes per item (product of the trailing dimensions).
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    let header = bytes.get(..4).ok_or_else(|| DataError::Format("idx: shorter than the magic number".into()))?;
    let magic = u32::from_be_bytes(header.try_into().expect("4 bytes"));
    if header[0] != 0 || header[1] != 0 || header[2] != 0x08 || !(1..=4).contains(&header[3]) {
        return Err(DataError::Format(format!("idx: bad magic 0x{magic:08X}")));
    }
    let ndims = header[3] as usize;
    let dim_bytes = bytes
        .get(4..4 + 4 * ndims)
        .ok_or_else(|| DataError::Format("idx: truncated dimension header".into()))?;
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DataError::Format("idx: dimension product overflows".into()))?;
    let payload = &bytes[4 + 4 * ndims..];
    if payload.len() != expected {
        return Err(DataError::Format(format!(
            "idx: payload has {} bytes, dimensions {:?} need {}",
            payload.len(),
            dims,
            expected
        )));
    }
    Ok(IdxTensor { dims, data: payload.to_vec() })
}

pub fn load_idx(path: &Path) -> Result<IdxTensor, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    parse_idx(&bytes).map_err(|e| match e {
        DataError::Format(msg) => DataError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Serializes a u8 tensor (used by the Fashion-MNIST converter and test fixtures).
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_and_labels_parse() {
        let images = parse_idx(&encode_idx(&[3, 2, 2], &[0u8; 12])).unwrap();
        assert_eq!(images.dims, vec![3, 2, 2]);
        assert_eq!(images.count(), 3);
        assert_eq!(images.item_len(), 4);
        let labels = parse_idx(&encode_idx(&[3], &[1, 2, 3])).unwrap();
        assert_eq!(labels.data, vec![1, 2, 3]);
        assert_eq!(u32::from_be_bytes(encode_idx(&[1, 1, 1], &[0])[..4].try_into().unwrap()), IMAGES_MAGIC);
        assert_eq!(u32::from_be_bytes(encode_idx(&[1], &[0])[..4].try_into().unwrap()), LABELS_MAGIC);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut bad = encode_idx(&[1], &[0]);
        bad[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
        assert!(matches!(parse_idx(&bad), Err(DataError::Format(_))));
        let full = encode_idx(&[2, 2, 2], &[7u8; 8]);
        assert!(matches!(parse_idx(&full[..full.len() - 1]), Err(DataError::Format(_))));
        assert!(matches!(parse_idx(&full[..6]), Err(DataError::Format(_))));
    }
}
