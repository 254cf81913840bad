//! Magnitude pruning with persistent masks.
//!
//! Weight mode masks the smallest-|w| weights; neuron mode removes whole hidden units with
//! the smallest incoming L2 norm, masking both their incoming row and their outgoing
//! connections. Biases are never masked. Masked weights stay at zero through training
//! because the mask also gates the SGD update.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Network, Scalar};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("prune fraction {0} outside [0, 1)")]
    Range(f64),
    #[error("network has nothing to prune: {0}")]
    NothingToPrune(&'static str),
    #[error("mask export failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    Global,
    PerLayer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneUnit {
    #[default]
    Weight,
    Neuron,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    /// Per trainable layer, congruent to its weights; `true` = kept.
    pub layers: Vec<Array2<bool>>,
    pub fraction_requested: f64,
    pub scope: PruneScope,
    pub unit: PruneUnit,
    /// Masked weights after this call (including ones masked earlier).
    pub count_masked: usize,
    /// Weights masked by this call only.
    pub newly_masked: usize,
    /// Removed output units per layer (always empty in weight mode).
    pub removed_units: Vec<Vec<bool>>,
}

fn target_count(fraction: f64, population: usize) -> usize {
    // small slack so decimal fractions such as 0.29 * 100 do not round down a whole unit
    ((fraction * population as f64) + 1e-9).floor() as usize
}

fn check_fraction(fraction: f64) -> Result<(), PruneError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(PruneError::Range(fraction));
    }
    Ok(())
}

/// Candidate for removal: already-masked entries sort first, then by magnitude, then by
/// (layer, index).
#[derive(Clone, Copy)]
struct Candidate {
    fresh: bool,
    magnitude: f64,
    layer: usize,
    index: usize,
}

fn rank(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| {
        a.fresh
            .cmp(&b.fresh)
            .then(a.magnitude.total_cmp(&b.magnitude))
            .then(a.layer.cmp(&b.layer))
            .then(a.index.cmp(&b.index))
    });
}

pub fn magnitude_prune<S: Scalar>(
    net: &Network<S>,
    fraction: f64,
    scope: PruneScope,
    unit: PruneUnit,
) -> Result<(Network<S>, PruneMask), PruneError> {
    check_fraction(fraction)?;
    let before: usize = net.layers().iter().map(|l| l.masked_count()).sum();
    let mut out = net.clone();
    match unit {
        PruneUnit::Weight => prune_weights(&mut out, fraction, scope)?,
        PruneUnit::Neuron => prune_neurons(&mut out, fraction, scope)?,
    }
    let count_masked: usize = out.layers().iter().map(|l| l.masked_count()).sum();
    let mask = PruneMask {
        layers: out.layers().iter().map(|l| l.mask().clone()).collect(),
        fraction_requested: fraction,
        scope,
        unit,
        count_masked,
        newly_masked: count_masked - before,
        removed_units: match unit {
            PruneUnit::Weight => Vec::new(),
            PruneUnit::Neuron => out.layers().iter().map(|l| l.removed_units().to_vec()).collect(),
        },
    };
    Ok((out, mask))
}

fn prune_weights<S: Scalar>(net: &mut Network<S>, fraction: f64, scope: PruneScope) -> Result<(), PruneError> {
    let total: usize = net.layers().iter().map(|l| l.weights().len()).sum();
    if total == 0 {
        return Err(PruneError::NothingToPrune("no weights"));
    }
    fn collect<S: Scalar>(layer: usize, params: &crate::nn::LayerParams<S>) -> impl Iterator<Item = Candidate> + '_ {
        params
            .weights()
            .iter()
            .zip(params.mask().iter())
            .enumerate()
            .map(move |(index, (w, &keep))| Candidate {
                fresh: keep,
                magnitude: if keep { w.abs().to_f64().unwrap_or(f64::INFINITY) } else { 0.0 },
                layer,
                index,
            })
    }
    let groups: Vec<Vec<Candidate>> = match scope {
        PruneScope::Global => vec![net.layers().iter().enumerate().flat_map(|(l, p)| collect(l, p)).collect()],
        PruneScope::PerLayer => net.layers().iter().enumerate().map(|(l, p)| collect(l, p).collect()).collect(),
    };
    for mut group in groups {
        let target = target_count(fraction, group.len());
        rank(&mut group);
        for c in group.iter().take(target) {
            let params = &mut net.layers_mut()[c.layer];
            let cols = params.weights.ncols();
            let (r, k) = (c.index / cols, c.index % cols);
            params.mask[[r, k]] = false;
            params.weights[[r, k]] = S::zero();
        }
    }
    Ok(())
}

fn prune_neurons<S: Scalar>(net: &mut Network<S>, fraction: f64, scope: PruneScope) -> Result<(), PruneError> {
    let hidden = net.layers().len().saturating_sub(1);
    if hidden == 0 {
        return Err(PruneError::NothingToPrune("no hidden layer"));
    }
    let collect = |layer: usize, params: &crate::nn::LayerParams<S>| -> Vec<Candidate> {
        params
            .weights()
            .rows()
            .into_iter()
            .zip(params.mask().rows())
            .enumerate()
            .map(|(index, (row, keep))| {
                let norm = row
                    .iter()
                    .zip(keep.iter())
                    .filter(|(_, k)| **k)
                    .map(|(w, _)| w.to_f64().unwrap_or(f64::INFINITY).powi(2))
                    .sum::<f64>()
                    .sqrt();
                Candidate { fresh: !params.removed_units()[index], magnitude: norm, layer, index }
            })
            .collect()
    };
    let groups: Vec<Vec<Candidate>> = match scope {
        PruneScope::Global => vec![(0..hidden).flat_map(|l| collect(l, &net.layers()[l])).collect()],
        PruneScope::PerLayer => (0..hidden).map(|l| collect(l, &net.layers()[l])).collect(),
    };
    for mut group in groups {
        let target = target_count(fraction, group.len());
        rank(&mut group);
        for c in group.iter().take(target) {
            remove_unit(net, c.layer, c.index);
        }
    }
    Ok(())
}

/// Masks the unit's incoming row and the block of next-layer columns fed by it.
fn remove_unit<S: Scalar>(net: &mut Network<S>, layer: usize, unit: usize) {
    let units = net.layers()[layer].units();
    {
        let params = &mut net.layers_mut()[layer];
        params.removed_units[unit] = true;
        params.mask.row_mut(unit).fill(false);
        params.weights.row_mut(unit).fill(S::zero());
    }
    let next = &mut net.layers_mut()[layer + 1];
    let per_unit = next.weights.ncols() / units;
    for col in unit * per_unit..(unit + 1) * per_unit {
        next.mask.column_mut(col).fill(false);
        next.weights.column_mut(col).fill(S::zero());
    }
}

/// Masked weights over all weights; biases are not counted.
pub fn sparsity<S: Scalar>(net: &Network<S>) -> f64 {
    let total: usize = net.layers().iter().map(|l| l.weights().len()).sum();
    if total == 0 {
        return 0.0;
    }
    let masked: usize = net.layers().iter().map(|l| l.masked_count()).sum();
    masked as f64 / total as f64
}

/// Total fraction to request so that `fraction` of the currently surviving weights go.
pub fn fraction_of_survivors(current_sparsity: f64, fraction: f64) -> f64 {
    1.0 - (1.0 - current_sparsity) * (1.0 - fraction)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskManifest {
    fraction_requested: f64,
    scope: PruneScope,
    unit: PruneUnit,
    count_masked: usize,
    bit_order: String,
    layers: Vec<MaskLayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskLayerEntry {
    file: String,
    rows: usize,
    cols: usize,
    masked: usize,
}

/// Writes `layer_<i>.bits` (row-major, LSB-first, bit set = kept) plus `manifest.json`.
pub fn export_mask(mask: &PruneMask, dir: &Path) -> Result<(), PruneError> {
    fs::create_dir_all(dir)?;
    let mut layers = Vec::new();
    for (i, m) in mask.layers.iter().enumerate() {
        let file = format!("layer_{i}.bits");
        fs::write(dir.join(&file), pack_bits(m.iter().copied()))?;
        let (rows, cols) = m.dim();
        layers.push(MaskLayerEntry { file, rows, cols, masked: m.iter().filter(|k| !**k).count() });
    }
    let manifest = MaskManifest {
        fraction_requested: mask.fraction_requested,
        scope: mask.scope,
        unit: mask.unit,
        count_masked: mask.count_masked,
        bit_order: "row-major, lsb-first, 1 = kept".into(),
        layers,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Reads back the per-layer masks written by [`export_mask`].
pub fn import_mask_layers(dir: &Path) -> Result<Vec<Array2<bool>>, PruneError> {
    let manifest: MaskManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
        .map_err(std::io::Error::other)?;
    manifest
        .layers
        .iter()
        .map(|entry| {
            let bytes = fs::read(dir.join(&entry.file))?;
            let n = entry.rows * entry.cols;
            if bytes.len() != n.div_ceil(8) {
                return Err(PruneError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: expected {} bytes, found {}", entry.file, n.div_ceil(8), bytes.len()),
                )));
            }
            let bits: Vec<bool> = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
            Ok(Array2::from_shape_vec((entry.rows, entry.cols), bits).expect("length checked"))
        })
        .collect()
}

fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().expect("pushed above") |= 1 << (i % 8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, count_parameters, evaluate, ArchitectureSpec, Dataset, Split};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn four_weight_net() -> Network<f64> {
        let mut net = build_network::<f64>(&ArchitectureSpec::mlp(&[4, 1]), 0).unwrap();
        net.set_weights(0, array![[0.3, -0.1, 0.2, -0.4]]).unwrap();
        net
    }

    #[test]
    fn global_half_prune_keeps_largest() {
        let (pruned, mask) = magnitude_prune(&four_weight_net(), 0.5, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert_eq!(mask.layers[0], array![[true, false, false, true]]);
        assert_eq!(pruned.layers()[0].weights(), &array![[0.3, 0.0, 0.0, -0.4]]);
        assert_eq!(mask.count_masked, 2);
    }

    #[test]
    fn zero_fraction_is_a_no_op() {
        let net = four_weight_net();
        let (pruned, mask) = magnitude_prune(&net, 0.0, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert_eq!(pruned, net);
        assert_eq!(mask.newly_masked, 0);
    }

    #[test]
    fn high_fraction_floors() {
        let (_, mask) = magnitude_prune(&four_weight_net(), 0.99, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert_eq!(mask.count_masked, 3);
    }

    #[test]
    fn out_of_range_fractions_are_rejected() {
        for f in [1.0, -0.1, f64::NAN, 1.5] {
            assert!(matches!(
                magnitude_prune(&four_weight_net(), f, PruneScope::Global, PruneUnit::Weight),
                Err(PruneError::Range(_))
            ));
        }
    }

    #[test]
    fn ties_break_by_layer_then_index() {
        let mut net = build_network::<f64>(&ArchitectureSpec::mlp(&[2, 2, 1]), 0).unwrap();
        net.set_weights(0, array![[0.5, 0.1], [0.1, 0.5]]).unwrap();
        net.set_weights(1, array![[0.1, 0.5]]).unwrap();
        // three weights tie at 0.1; only two go
        let (_, mask) = magnitude_prune(&net, 2.0 / 6.0, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert_eq!(mask.layers[0], array![[true, false], [false, true]]);
        assert_eq!(mask.layers[1], array![[true, true]]);
    }

    #[test]
    fn sparsity_after_prunes() {
        let spec = ArchitectureSpec::mlp(&[784, 128, 64, 10]);
        let net = build_network::<f32>(&spec, 11).unwrap();
        assert_eq!(sparsity(&net), 0.0);
        let weights = 109_184usize;
        let (half, _) = magnitude_prune(&net, 0.5, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert_eq!(sparsity(&half), (weights / 2) as f64 / weights as f64);
        assert_eq!(count_parameters(&half).unmasked, 109_386 - 54_592);

        let (p30, _) = magnitude_prune(&net, 0.3, PruneScope::Global, PruneUnit::Weight).unwrap();
        let target = fraction_of_survivors(sparsity(&p30), 0.5);
        let (p65, _) = magnitude_prune(&p30, target, PruneScope::Global, PruneUnit::Weight).unwrap();
        assert!((sparsity(&p65) - (1.0 - 0.7 * 0.5)).abs() <= 1.0 / weights as f64);
    }

    #[test]
    fn per_layer_scope_prunes_each_layer() {
        let spec = ArchitectureSpec::mlp(&[10, 10, 4]);
        let net = build_network::<f64>(&spec, 2).unwrap();
        let (pruned, mask) = magnitude_prune(&net, 0.5, PruneScope::PerLayer, PruneUnit::Weight).unwrap();
        assert_eq!(pruned.layers()[0].masked_count(), 50);
        assert_eq!(pruned.layers()[1].masked_count(), 20);
        assert_eq!(mask.count_masked, 70);
    }

    #[test]
    fn neuron_mode_removes_units_and_their_fan_out() {
        let spec = ArchitectureSpec::mlp(&[6, 8, 4, 3]);
        let net = build_network::<f64>(&spec, 5).unwrap();
        let (pruned, mask) = magnitude_prune(&net, 0.5, PruneScope::PerLayer, PruneUnit::Neuron).unwrap();
        let removed0: Vec<usize> = (0..8).filter(|&u| mask.removed_units[0][u]).collect();
        assert_eq!(removed0.len(), 4);
        assert_eq!(mask.removed_units[1].iter().filter(|r| **r).count(), 2);
        assert!(mask.removed_units[2].iter().all(|r| !r));
        for &u in &removed0 {
            assert!(pruned.layers()[0].weights().row(u).iter().all(|w| *w == 0.0));
            assert!(pruned.layers()[1].mask().column(u).iter().all(|k| !k));
        }
        // removed units were the smallest rows of the original layer
        let norms: Vec<f64> = net.layers()[0].weights().rows().into_iter().map(|r| r.dot(&r)).collect();
        let max_removed = removed0.iter().map(|&u| norms[u]).fold(0.0, f64::max);
        let min_kept = (0..8).filter(|u| !removed0.contains(u)).map(|u| norms[u]).fold(f64::INFINITY, f64::min);
        assert!(max_removed <= min_kept);
    }

    #[test]
    fn neuron_mode_handles_conv_fan_out() {
        use crate::nn::{Activation, LayerSpec, PoolKind};
        let spec = ArchitectureSpec::new(vec![
            LayerSpec::Conv { in_channels: 1, filters: 4, kernel: (3, 3), activation: Activation::Relu },
            LayerSpec::Pool { kind: PoolKind::Max, window: (2, 2) },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 36, outputs: 2, activation: Activation::Identity },
        ])
        .with_input_shape(1, 8, 8);
        let net = build_network::<f64>(&spec, 1).unwrap();
        let (pruned, mask) = magnitude_prune(&net, 0.5, PruneScope::Global, PruneUnit::Neuron).unwrap();
        let removed: Vec<usize> = (0..4).filter(|&u| mask.removed_units[0][u]).collect();
        assert_eq!(removed.len(), 2);
        for &u in &removed {
            for col in u * 9..(u + 1) * 9 {
                assert!(pruned.layers()[1].mask().column(col).iter().all(|k| !k));
            }
        }
        assert_eq!(pruned.layers()[1].masked_count(), 2 * 2 * 9);
    }

    #[test]
    fn pruned_net_still_evaluates() {
        let spec = ArchitectureSpec::mlp(&[3, 5, 2]);
        let net = build_network::<f32>(&spec, 8).unwrap();
        let data = Dataset::new(Array2::from_elem((4, 3), 0.5), vec![0, 1, 0, 1], 2, Split::Test).unwrap();
        for unit in [PruneUnit::Weight, PruneUnit::Neuron] {
            let (pruned, _) = magnitude_prune(&net, 0.9, PruneScope::Global, unit).unwrap();
            let acc = evaluate(&pruned, &data).unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn mask_export_round_trip() {
        let spec = ArchitectureSpec::mlp(&[5, 3, 2]);
        let net = build_network::<f32>(&spec, 8).unwrap();
        let (_, mask) = magnitude_prune(&net, 0.4, PruneScope::Global, PruneUnit::Weight).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_mask(&mask, dir.path()).unwrap();
        assert_eq!(import_mask_layers(dir.path()).unwrap(), mask.layers);
        assert_eq!(std::fs::read(dir.path().join("layer_0.bits")).unwrap().len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn survivors_dominate_and_repeat_is_idempotent(seed in 0u64..1000, fraction in 0.0f64..0.95) {
            let net = build_network::<f64>(&ArchitectureSpec::mlp(&[7, 6, 3]), seed).unwrap();
            let (pruned, mask) = magnitude_prune(&net, fraction, PruneScope::Global, PruneUnit::Weight).unwrap();
            let total = 7 * 6 + 6 * 3;
            prop_assert_eq!(mask.count_masked, target_count(fraction, total));
            let mut max_removed = 0.0f64;
            let mut min_kept = f64::INFINITY;
            for (orig, p) in net.layers().iter().zip(pruned.layers()) {
                for (w, keep) in orig.weights().iter().zip(p.mask().iter()) {
                    if *keep { min_kept = min_kept.min(w.abs()) } else { max_removed = max_removed.max(w.abs()) }
                }
            }
            prop_assert!(max_removed <= min_kept);
            let (again, mask2) = magnitude_prune(&pruned, fraction, PruneScope::Global, PruneUnit::Weight).unwrap();
            prop_assert_eq!(mask2.newly_masked, 0);
            prop_assert_eq!(again, pruned);
        }
    }
}
