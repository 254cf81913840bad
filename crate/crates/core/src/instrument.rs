//! Activation statistics on a fixed probe set and alive/dead classification of units.
//!
//! A unit is a node of a dense layer, a channel of the input image, or a filter of a conv
//! layer. Its statistic is the mean absolute post-activation value over the probe samples
//! (and, for channels and filters, over spatial positions). A unit is alive when that mean
//! strictly exceeds the threshold.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emergence::EmergenceError;
use crate::nn::{Dataset, Network, NnError, Scalar, Split, UnitKind};

pub const DEFAULT_THETA: f64 = 0.05;
pub const DEFAULT_PROBE_SIZE: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub probe_size: usize,
    pub theta: f64,
    pub probe_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { probe_size: DEFAULT_PROBE_SIZE, theta: DEFAULT_THETA, probe_seed: 0 }
    }
}

/// Draws the probe set: `probe_size` distinct training samples (all of them if the split is
/// smaller), in ascending index order.
pub fn select_probe(train: &Dataset, cfg: &ProbeConfig) -> Result<Dataset, NnError> {
    if train.split() != Split::Train {
        return Err(NnError::InvalidDataset("probe set must come from the train split".into()));
    }
    if cfg.probe_size == 0 {
        return Err(NnError::Config("probe_size must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.probe_seed);
    let amount = cfg.probe_size.min(train.len());
    let mut idx = rand::seq::index::sample(&mut rng, train.len(), amount).into_vec();
    idx.sort_unstable();
    Ok(train.select(&idx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerActivity {
    pub kind: UnitKind,
    /// Mean absolute activation per unit.
    pub means: Vec<f64>,
    /// `false` for units removed by structured pruning; they are excluded from the counts.
    pub present: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub layers: Vec<LayerActivity>,
}

impl ActivationStats {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.means.len()).collect()
    }
}

/// One forward sweep over the probe set; the network is not modified.
pub fn collect_activation_stats<S: Scalar>(net: &Network<S>, probe: &Dataset) -> Result<ActivationStats, NnError> {
    if probe.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if probe.features() != net.input_len() {
        return Err(NnError::Dimension { expected: net.input_len(), found: probe.features() });
    }
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut layout: Vec<(UnitKind, Option<usize>, usize)> = Vec::new();
    let all: Vec<usize> = (0..probe.len()).collect();
    for idx in all.chunks(256) {
        let x = probe.inputs().select(Axis(0), idx).mapv(|v| S::from_f32(v).expect("f32 converts"));
        let (_, trace) = net.forward(x.view())?;
        if sums.is_empty() {
            sums = trace.layers.iter().map(|l| vec![0.0; l.units]).collect();
            layout = trace.layers.iter().map(|l| (l.kind, l.param, l.spatial)).collect();
        }
        for (acc, layer) in sums.iter_mut().zip(&trace.layers) {
            for row in layer.values.rows() {
                for (u, slot) in acc.iter_mut().enumerate() {
                    let block = row.slice(ndarray::s![u * layer.spatial..(u + 1) * layer.spatial]);
                    *slot += block.iter().map(|v| v.abs().to_f64().unwrap_or(f64::NAN)).sum::<f64>();
                }
            }
        }
    }
    let layers = sums
        .into_iter()
        .zip(layout)
        .map(|(acc, (kind, param, spatial))| {
            let denom = (probe.len() * spatial) as f64;
            let present = match param {
                Some(p) => net.layers()[p].removed_units().iter().map(|r| !r).collect(),
                None => vec![true; acc.len()],
            };
            LayerActivity { kind, means: acc.into_iter().map(|s| s / denom).collect(), present }
        })
        .collect();
    Ok(ActivationStats { layers })
}

/// `(n_i, a_i)` for one layer: present units and alive units among them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    #[serde(rename = "n")]
    pub total: u64,
    #[serde(rename = "a")]
    pub active: u64,
}

/// Per-layer unit and alive counts; the only input the emergence formulas need.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerCount>", into = "Vec<LayerCount>")]
pub struct ActiveCounts {
    layers: Vec<LayerCount>,
}

impl TryFrom<Vec<LayerCount>> for ActiveCounts {
    type Error = EmergenceError;

    fn try_from(layers: Vec<LayerCount>) -> Result<Self, Self::Error> {
        for (layer, c) in layers.iter().enumerate() {
            if c.active > c.total {
                return Err(EmergenceError::ActiveExceedsTotal { layer, active: c.active, total: c.total });
            }
        }
        Ok(Self { layers })
    }
}

impl From<ActiveCounts> for Vec<LayerCount> {
    fn from(c: ActiveCounts) -> Self {
        c.layers
    }
}

impl ActiveCounts {
    pub fn new(layers: Vec<LayerCount>) -> Result<Self, EmergenceError> {
        Self::try_from(layers)
    }

    /// Pairs `totals[i]` with `actives[i]`.
    pub fn from_slices(totals: &[u64], actives: &[u64]) -> Result<Self, EmergenceError> {
        if totals.len() != actives.len() {
            return Err(EmergenceError::LengthMismatch { expected: totals.len(), found: actives.len() });
        }
        Self::new(totals.iter().zip(actives).map(|(&total, &active)| LayerCount { total, active }).collect())
    }

    pub fn layers(&self) -> &[LayerCount] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn totals(&self) -> Vec<u64> {
        self.layers.iter().map(|c| c.total).collect()
    }

    pub fn actives(&self) -> Vec<u64> {
        self.layers.iter().map(|c| c.active).collect()
    }

    /// Counts with the first (input) layer dropped.
    pub fn without_input(&self) -> ActiveCounts {
        ActiveCounts { layers: self.layers.iter().skip(1).copied().collect() }
    }
}

/// Alive iff the mean statistic is strictly greater than `theta`.
pub fn classify_active(stats: &ActivationStats, theta: f64) -> ActiveCounts {
    let layers = stats
        .layers
        .iter()
        .map(|layer| {
            let mut total = 0;
            let mut active = 0;
            for (&mean, &present) in layer.means.iter().zip(&layer.present) {
                if present {
                    total += 1;
                    if mean > theta {
                        active += 1;
                    }
                }
            }
            LayerCount { total, active }
        })
        .collect();
    ActiveCounts { layers }
}

/// Per-unit alive flags of one layer.
pub fn alive_flags(layer: &LayerActivity, theta: f64) -> Vec<bool> {
    layer.means.iter().map(|&m| m > theta).collect()
}
