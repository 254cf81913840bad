use std::fmt::{Debug, Display};
use std::ops::{AddAssign, SubAssign};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Activation, ArchitectureSpec, ConvGeom, PoolGeom, Resolved, Shape, Stage};
use super::NnError;

/// Floating point element type of a network. Training uses `f32`; gradient checks use `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn cast<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite f64 converts to network scalar")
}

/// Weights, bias and prune mask of one trainable layer.
///
/// Dense weights are `outputs x inputs`; conv weights are `filters x (in_channels * kh * kw)`
/// with the patch laid out channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    pub(crate) weights: Array2<S>,
    pub(crate) bias: Array1<S>,
    pub(crate) mask: Array2<bool>,
    pub(crate) removed_units: Vec<bool>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn weights(&self) -> &Array2<S> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<S> {
        &self.bias
    }

    /// `true` = trainable, `false` = pruned.
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Output units removed by structured pruning.
    pub fn removed_units(&self) -> &[bool] {
        &self.removed_units
    }

    pub fn units(&self) -> usize {
        self.weights.nrows()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    fn enforce_mask(&mut self) {
        Zip::from(&mut self.weights).and(&self.mask).for_each(|w, &keep| {
            if !keep {
                *w = S::zero();
            }
        });
    }
}

/// Gradients for every trainable layer, congruent to [`LayerParams`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

/// Which kind of unit layer a trace entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Input,
    Dense,
    Conv,
}

/// Post-activation values of one unit layer for a batch, channel-major: unit `u` occupies
/// columns `u * spatial .. (u + 1) * spatial`.
#[derive(Clone, Debug)]
pub struct TraceLayer<S> {
    pub kind: UnitKind,
    /// Trainable layer index that produced these units; `None` for the input.
    pub param: Option<usize>,
    pub units: usize,
    pub spatial: usize,
    pub values: Array2<S>,
}

#[derive(Clone, Debug)]
pub struct ActivationTrace<S> {
    pub layers: Vec<TraceLayer<S>>,
}

impl<S> ActivationTrace<S> {
    pub fn unit_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.units).collect()
    }
}

enum Aux<S> {
    None,
    Cols(Array2<S>),
    ArgMax(Vec<u32>),
}

struct Pass<S> {
    /// `acts[0]` is the batch, `acts[i + 1]` is the output of stage `i`.
    acts: Vec<Array2<S>>,
    aux: Vec<Aux<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<S: Scalar = f32> {
    spec: ArchitectureSpec,
    resolved: Resolved,
    layers: Vec<LayerParams<S>>,
    seed: u64,
}

/// Builds a network with Glorot-uniform weights drawn from a ChaCha8 stream seeded with `seed`,
/// zero biases and all-ones masks.
pub fn build_network<S: Scalar>(spec: &ArchitectureSpec, seed: u64) -> Result<Network<S>, NnError> {
    let resolved = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for stage in &resolved.stages {
        let (rows, cols, fan_in, fan_out) = match *stage {
            Stage::Dense { inputs, outputs, .. } => (outputs, inputs, inputs, outputs),
            Stage::Conv { geom, .. } => (
                geom.filters,
                geom.patch_len(),
                geom.patch_len(),
                geom.filters * geom.kh * geom.kw,
            ),
            _ => continue,
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((rows, cols), || cast::<S>(rng.random_range(-limit..limit)));
        layers.push(LayerParams {
            weights,
            bias: Array1::zeros(rows),
            mask: Array2::from_elem((rows, cols), true),
            removed_units: vec![false; rows],
        });
    }
    Ok(Network { spec: spec.clone(), resolved, layers, seed })
}

impl<S: Scalar> Network<S> {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerParams<S>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.resolved.input.len()
    }

    pub fn input_shape(&self) -> Shape {
        self.resolved.input
    }

    pub fn classes(&self) -> usize {
        self.resolved.classes
    }

    /// Replaces a layer's weights. Masked positions are forced back to zero.
    pub fn set_weights(&mut self, layer: usize, weights: Array2<S>) -> Result<(), NnError> {
        let params = self.layers.get_mut(layer).ok_or_else(|| NnError::Shape(format!("no layer {layer}")))?;
        if weights.dim() != params.weights.dim() {
            return Err(NnError::Shape(format!(
                "weights {:?} do not match layer shape {:?}",
                weights.dim(),
                params.weights.dim()
            )));
        }
        params.weights = weights;
        params.enforce_mask();
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, bias: Array1<S>) -> Result<(), NnError> {
        let params = self.layers.get_mut(layer).ok_or_else(|| NnError::Shape(format!("no layer {layer}")))?;
        if bias.len() != params.bias.len() {
            return Err(NnError::Shape(format!("bias length {} != {}", bias.len(), params.bias.len())));
        }
        params.bias = bias;
        Ok(())
    }

    /// Same network in another precision.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        let conv = |v: &S| cast::<T>(v.to_f64().unwrap_or(f64::NAN));
        Network {
            spec: self.spec.clone(),
            resolved: self.resolved.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.map(conv),
                    bias: l.bias.map(conv),
                    mask: l.mask.clone(),
                    removed_units: l.removed_units.clone(),
                })
                .collect(),
            seed: self.seed,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    fn check_batch(&self, batch: &ArrayView2<S>) -> Result<(), NnError> {
        let expected = self.input_len();
        if batch.ncols() != expected {
            return Err(NnError::Dimension { expected, found: batch.ncols() });
        }
        Ok(())
    }

    /// Logits plus post-activation values of every unit layer (input included).
    pub fn forward(&self, batch: ArrayView2<S>) -> Result<(Array2<S>, ActivationTrace<S>), NnError> {
        self.check_batch(&batch)?;
        let pass = self.run(batch.to_owned(), false);
        let (units, spatial) = self.resolved.input.units();
        let mut layers = vec![TraceLayer {
            kind: UnitKind::Input,
            param: None,
            units,
            spatial,
            values: pass.acts[0].clone(),
        }];
        for (i, stage) in self.resolved.stages.iter().enumerate() {
            match *stage {
                Stage::Dense { param, outputs, .. } => layers.push(TraceLayer {
                    kind: UnitKind::Dense,
                    param: Some(param),
                    units: outputs,
                    spatial: 1,
                    values: pass.acts[i + 1].clone(),
                }),
                Stage::Conv { param, geom, .. } => layers.push(TraceLayer {
                    kind: UnitKind::Conv,
                    param: Some(param),
                    units: geom.filters,
                    spatial: geom.out_positions(),
                    values: pass.acts[i + 1].clone(),
                }),
                _ => {}
            }
        }
        let logits = pass.acts.last().cloned().expect("at least one stage");
        Ok((logits, ActivationTrace { layers }))
    }

    pub fn logits(&self, batch: ArrayView2<S>) -> Result<Array2<S>, NnError> {
        self.check_batch(&batch)?;
        let mut pass = self.run(batch.to_owned(), false);
        Ok(pass.acts.pop().expect("at least one stage"))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, batch: ArrayView2<S>, labels: &[u8]) -> Result<S, NnError> {
        let logits = self.logits(batch)?;
        let (loss, _, _) = softmax_cross_entropy(&logits, labels, false)?;
        Ok(loss)
    }

    /// Mean loss, its gradient with respect to every parameter, and the number of correct
    /// argmax predictions in the batch.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView2<S>,
        labels: &[u8],
    ) -> Result<(S, Gradients<S>, usize), NnError> {
        self.check_batch(&batch)?;
        let pass = self.run(batch.to_owned(), true);
        let logits = pass.acts.last().expect("at least one stage");
        let correct = argmax_rows(logits).iter().zip(labels).filter(|(p, l)| **p == **l as usize).count();
        let (loss, dlogits, _) = softmax_cross_entropy(logits, labels, true)?;
        let grads = self.backward(&pass, dlogits.expect("requested gradient"));
        Ok((loss, grads, correct))
    }

    /// `w <- w - lr * mask * grad`; biases are never masked.
    pub fn apply_gradients(&mut self, grads: &Gradients<S>, learning_rate: S) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            Zip::from(&mut layer.weights).and(gw).and(&layer.mask).for_each(|w, &g, &keep| {
                if keep {
                    *w = *w - learning_rate * g;
                }
            });
            Zip::from(&mut layer.bias).and(gb).for_each(|b, &g| *b = *b - learning_rate * g);
        }
    }

    fn run(&self, batch: Array2<S>, keep_aux: bool) -> Pass<S> {
        let mut acts = Vec::with_capacity(self.resolved.stages.len() + 1);
        let mut aux = Vec::with_capacity(self.resolved.stages.len());
        acts.push(batch);
        for stage in &self.resolved.stages {
            let x = acts.last().expect("input present");
            let (out, a) = match *stage {
                Stage::Dense { param, activation, .. } => {
                    let p = &self.layers[param];
                    let mut z = x.dot(&p.weights.t());
                    z += &p.bias;
                    activate(&mut z, activation);
                    (z, Aux::None)
                }
                Stage::Conv { param, geom, activation } => {
                    let p = &self.layers[param];
                    let cols = im2col(x.view(), &geom);
                    let mut rows = cols.dot(&p.weights.t());
                    rows += &p.bias;
                    let mut z = rows_to_channel_major(&rows, x.nrows(), &geom);
                    activate(&mut z, activation);
                    (z, if keep_aux { Aux::Cols(cols) } else { Aux::None })
                }
                Stage::Pool { geom } => {
                    let (y, arg) = max_pool(x.view(), &geom);
                    (y, if keep_aux { Aux::ArgMax(arg) } else { Aux::None })
                }
                Stage::Flatten { .. } => (x.clone(), Aux::None),
            };
            acts.push(out);
            aux.push(a);
        }
        Pass { acts, aux }
    }

    fn backward(&self, pass: &Pass<S>, dlogits: Array2<S>) -> Gradients<S> {
        let mut gw: Vec<Option<Array2<S>>> = vec![None; self.layers.len()];
        let mut gb: Vec<Option<Array1<S>>> = vec![None; self.layers.len()];
        let mut grad = dlogits;
        for (i, stage) in self.resolved.stages.iter().enumerate().rev() {
            let input = &pass.acts[i];
            let output = &pass.acts[i + 1];
            let need_dx = i > 0;
            match *stage {
                Stage::Dense { param, activation, .. } => {
                    activation_backward(&mut grad, output, activation);
                    let p = &self.layers[param];
                    gw[param] = Some(grad.t().dot(input));
                    gb[param] = Some(grad.sum_axis(Axis(0)));
                    if need_dx {
                        grad = grad.dot(&p.weights);
                    }
                }
                Stage::Conv { param, geom, activation } => {
                    activation_backward(&mut grad, output, activation);
                    let p = &self.layers[param];
                    let rows = channel_major_to_rows(&grad, &geom);
                    let Aux::Cols(cols) = &pass.aux[i] else {
                        unreachable!("conv cache kept during training pass")
                    };
                    gw[param] = Some(rows.t().dot(cols));
                    gb[param] = Some(rows.sum_axis(Axis(0)));
                    if need_dx {
                        let dcols = rows.dot(&p.weights);
                        grad = col2im(&dcols, input.nrows(), &geom);
                    }
                }
                Stage::Pool { geom } => {
                    let Aux::ArgMax(arg) = &pass.aux[i] else {
                        unreachable!("pool cache kept during training pass")
                    };
                    if need_dx {
                        grad = max_pool_backward(&grad, arg, input.nrows(), &geom);
                    }
                }
                Stage::Flatten { .. } => {}
            }
        }
        Gradients {
            weights: gw.into_iter().map(|g| g.expect("every layer visited")).collect(),
            biases: gb.into_iter().map(|g| g.expect("every layer visited")).collect(),
        }
    }
}

fn activate<S: Scalar>(z: &mut Array2<S>, activation: Activation) {
    if activation == Activation::Relu {
        z.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
    }
}

fn activation_backward<S: Scalar>(grad: &mut Array2<S>, output: &Array2<S>, activation: Activation) {
    if activation == Activation::Relu {
        Zip::from(grad).and(output).for_each(|g, &a| {
            if a <= S::zero() {
                *g = S::zero();
            }
        });
    }
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<S: Scalar>(logits: &Array2<S>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax probabilities.
pub fn softmax<S: Scalar>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of softmax(logits) and, optionally, its gradient w.r.t. the logits.
pub(crate) fn softmax_cross_entropy<S: Scalar>(
    logits: &Array2<S>,
    labels: &[u8],
    with_grad: bool,
) -> Result<(S, Option<Array2<S>>, Array2<S>), NnError> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(NnError::Dimension { expected: batch, found: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(NnError::InvalidDataset(format!("label {bad} outside 0..{classes}")));
    }
    let mut total = 0.0f64;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(S::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + sum.ln();
        total += (lse - row[label as usize]).to_f64().unwrap_or(f64::NAN);
    }
    let probs = softmax(logits);
    let loss = cast::<S>(total / batch as f64);
    let grad = with_grad.then(|| {
        let mut g = probs.clone();
        let scale = cast::<S>(1.0 / batch as f64);
        for (mut row, &label) in g.rows_mut().into_iter().zip(labels) {
            row[label as usize] = row[label as usize] - S::one();
            row.mapv_inplace(|v| v * scale);
        }
        g
    });
    Ok((loss, grad, probs))
}

fn im2col<S: Scalar>(x: ArrayView2<S>, g: &ConvGeom) -> Array2<S> {
    let batch = x.nrows();
    let positions = g.out_positions();
    let patch = g.patch_len();
    let plane = g.in_h * g.in_w;
    let mut cols = Array2::<S>::zeros((batch * positions, patch));
    let out = cols.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        let row = x.row(b);
        let src = row.as_slice().expect("batch rows are contiguous");
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let base = (b * positions + oy * g.out_w + ox) * patch;
                let mut k = base;
                for c in 0..g.in_channels {
                    for ky in 0..g.kh {
                        let start = c * plane + (oy + ky) * g.in_w + ox;
                        for kx in 0..g.kw {
                            out[k + kx] = src[start + kx];
                        }
                        k += g.kw;
                    }
                }
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(dcols: &Array2<S>, batch: usize, g: &ConvGeom) -> Array2<S> {
    let positions = g.out_positions();
    let patch = g.patch_len();
    let plane = g.in_h * g.in_w;
    let mut dx = Array2::<S>::zeros((batch, g.in_channels * plane));
    let src = dcols.as_slice().expect("fresh array is contiguous");
    for b in 0..batch {
        let mut row = dx.row_mut(b);
        let dst = row.as_slice_mut().expect("batch rows are contiguous");
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut k = (b * positions + oy * g.out_w + ox) * patch;
                for c in 0..g.in_channels {
                    for ky in 0..g.kh {
                        let start = c * plane + (oy + ky) * g.in_w + ox;
                        for kx in 0..g.kw {
                            dst[start + kx] = dst[start + kx] + src[k + kx];
                        }
                        k += g.kw;
                    }
                }
            }
        }
    }
    dx
}

fn rows_to_channel_major<S: Scalar>(rows: &Array2<S>, batch: usize, g: &ConvGeom) -> Array2<S> {
    let positions = g.out_positions();
    let mut out = Array2::<S>::zeros((batch, g.filters * positions));
    for b in 0..batch {
        let block = rows.slice(s![b * positions..(b + 1) * positions, ..]);
        let mut dst = out.row_mut(b).into_shape_with_order((g.filters, positions)).expect("contiguous row");
        dst.assign(&block.t());
    }
    out
}

fn channel_major_to_rows<S: Scalar>(grad: &Array2<S>, g: &ConvGeom) -> Array2<S> {
    let batch = grad.nrows();
    let positions = g.out_positions();
    let mut rows = Array2::<S>::zeros((batch * positions, g.filters));
    for b in 0..batch {
        let src = grad.row(b).into_shape_with_order((g.filters, positions)).expect("contiguous row");
        rows.slice_mut(s![b * positions..(b + 1) * positions, ..]).assign(&src.t());
    }
    rows
}

fn max_pool<S: Scalar>(x: ArrayView2<S>, g: &PoolGeom) -> (Array2<S>, Vec<u32>) {
    let batch = x.nrows();
    let out_len = g.channels * g.out_h * g.out_w;
    let mut y = Array2::<S>::zeros((batch, out_len));
    let mut arg = vec![0u32; batch * out_len];
    for b in 0..batch {
        let row = x.row(b);
        let src = row.as_slice().expect("batch rows are contiguous");
        let mut yrow = y.row_mut(b);
        let dst = yrow.as_slice_mut().expect("fresh array is contiguous");
        let mut j = 0;
        for c in 0..g.channels {
            let plane = c * g.in_h * g.in_w;
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut best_idx = plane + oy * g.ph * g.in_w + ox * g.pw;
                    let mut best = src[best_idx];
                    for ky in 0..g.ph {
                        for kx in 0..g.pw {
                            let idx = plane + (oy * g.ph + ky) * g.in_w + ox * g.pw + kx;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    dst[j] = best;
                    arg[b * out_len + j] = best_idx as u32;
                    j += 1;
                }
            }
        }
    }
    (y, arg)
}

fn max_pool_backward<S: Scalar>(grad: &Array2<S>, arg: &[u32], batch: usize, g: &PoolGeom) -> Array2<S> {
    let out_len = g.channels * g.out_h * g.out_w;
    let mut dx = Array2::<S>::zeros((batch, g.channels * g.in_h * g.in_w));
    for b in 0..batch {
        for j in 0..out_len {
            let idx = arg[b * out_len + j] as usize;
            dx[[b, idx]] = dx[[b, idx]] + grad[[b, j]];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, PoolKind};

    fn small_cnn() -> ArchitectureSpec {
        ArchitectureSpec::new(vec![
            LayerSpec::Conv { in_channels: 1, filters: 2, kernel: (2, 2), activation: Activation::Relu },
            LayerSpec::Pool { kind: PoolKind::Max, window: (2, 2) },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 8, outputs: 3, activation: Activation::Identity },
        ])
        .with_input_shape(1, 5, 5)
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut net: Network<f64> = build_network(&small_cnn(), 3).unwrap();
        let w = Array2::from_shape_vec((2, 4), vec![1.0, 0.0, 0.0, -1.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        net.set_weights(0, w).unwrap();
        net.set_bias(0, Array1::from_vec(vec![0.0, -1.0])).unwrap();
        let x = Array2::from_shape_fn((1, 25), |(_, i)| i as f64 / 25.0);
        let (_, trace) = net.forward(x.view()).unwrap();
        let conv = &trace.layers[1];
        assert_eq!((conv.units, conv.spatial), (2, 16));
        for oy in 0..4 {
            for ox in 0..4 {
                let px = |y: usize, xx: usize| x[[0, y * 5 + xx]];
                let f0 = (px(oy, ox) - px(oy + 1, ox + 1)).max(0.0);
                let f1 = (0.5 * (px(oy, ox) + px(oy, ox + 1) + px(oy + 1, ox) + px(oy + 1, ox + 1)) - 1.0).max(0.0);
                assert!((conv.values[[0, oy * 4 + ox]] - f0).abs() < 1e-12);
                assert!((conv.values[[0, 16 + oy * 4 + ox]] - f1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_lists_unit_layers_only() {
        let net: Network = build_network(&small_cnn(), 0).unwrap();
        let x = Array2::<f32>::zeros((4, 25));
        let (logits, trace) = net.forward(x.view()).unwrap();
        assert_eq!(logits.dim(), (4, 3));
        assert_eq!(trace.unit_counts(), vec![1, 2, 3]);
        assert_eq!(trace.layers.iter().map(|l| l.kind).collect::<Vec<_>>(), vec![UnitKind::Input, UnitKind::Conv, UnitKind::Dense]);
        assert_eq!(net.logits(x.view()).unwrap(), logits);
    }

    #[test]
    fn masked_weights_cannot_be_set() {
        let mut net: Network = build_network(&ArchitectureSpec::mlp(&[3, 2]), 0).unwrap();
        net.layers[0].mask[[0, 1]] = false;
        net.set_weights(0, Array2::from_elem((2, 3), 1.0)).unwrap();
        assert_eq!(net.layers()[0].weights()[[0, 1]], 0.0);
        assert_eq!(net.layers()[0].masked_count(), 1);
        assert!(net.set_weights(0, Array2::zeros((3, 3))).is_err());
        assert!(net.set_bias(1, Array1::zeros(2)).is_err());
    }

    #[test]
    fn cast_round_trips_f32() {
        let net: Network = build_network(&ArchitectureSpec::mlp(&[6, 4, 2]), 5).unwrap();
        let wide: Network<f64> = net.cast();
        assert_eq!(wide.cast::<f32>(), net);
        let x = Array2::<f32>::from_elem((2, 6), 0.5);
        let a = net.logits(x.view()).unwrap();
        let b = wide.logits(x.mapv(f64::from).view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (*p as f64 - q).abs() < 1e-5));
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let g = PoolGeom { channels: 1, in_h: 2, in_w: 2, ph: 2, pw: 2, out_h: 1, out_w: 1 };
        let x = Array2::from_shape_vec((1, 4), vec![0.1, 0.9, 0.3, 0.9]).unwrap();
        let (y, arg) = max_pool(x.view(), &g);
        assert_eq!(y[[0, 0]], 0.9);
        assert_eq!(arg, vec![1]);
        let dx = max_pool_backward(&Array2::from_elem((1, 1), 2.0), &arg, 1, &g);
        assert_eq!(dx.row(0).to_vec(), vec![0.0, 2.0, 0.0, 0.0]);
    }
}
