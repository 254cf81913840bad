use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples. Inputs are one flattened row per sample (images channel-major),
/// with values normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Array2<f32>,
    labels: Vec<u8>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Array2<f32>, labels: Vec<u8>, classes: usize, split: Split) -> Result<Self, NnError> {
        if inputs.nrows() != labels.len() {
            return Err(NnError::InvalidDataset(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NnError::InvalidDataset(format!("label {bad} outside 0..{classes}")));
        }
        if inputs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(NnError::InvalidDataset("inputs must lie in [0, 1]".into()));
        }
        Ok(Self { inputs, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> ArrayView2<'_, f32> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_data() {
        let x = Array2::<f32>::zeros((2, 3));
        assert!(Dataset::new(x.clone(), vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 2], 2, Split::Train).is_err());
        assert!(Dataset::new(x.mapv(|_| 1.5), vec![0, 1], 2, Split::Train).is_err());
        assert!(Dataset::new(x, vec![0, 1], 2, Split::Test).is_ok());
    }

    #[test]
    fn select_and_head_keep_order() {
        let x = Array2::from_shape_fn((4, 1), |(i, _)| i as f32 / 4.0);
        let d = Dataset::new(x, vec![0, 1, 2, 3], 4, Split::Train).unwrap();
        let s = d.select(&[3, 1]);
        assert_eq!(s.labels(), &[3, 1]);
        assert_eq!(s.inputs()[[0, 0]], 0.75);
        assert_eq!(d.head(10).len(), 4);
        assert_eq!(d.head(2).labels(), &[0, 1]);
    }
}
