//! Gradient-check helpers shared by the nn tests and the acceptance runner.

use emergence_lab::nn::*;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_mlp(rng: &mut ChaCha8Rng) -> ArchitectureSpec {
    loop {
        let depth = rng.random_range(2..=4);
        let mut widths: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=10)).collect();
        widths.push(rng.random_range(2..=5));
        let spec = ArchitectureSpec::mlp(&widths);
        let params: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params <= 500 {
            return spec;
        }
    }
}

pub fn tiny_cnn() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        LayerSpec::Conv { in_channels: 2, filters: 3, kernel: (3, 3), activation: Activation::Relu },
        LayerSpec::Pool { kind: PoolKind::Max, window: (2, 2) },
        LayerSpec::Conv { in_channels: 3, filters: 2, kernel: (2, 2), activation: Activation::Relu },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 8, outputs: 3, activation: Activation::Identity },
    ])
    .with_input_shape(2, 8, 8)
}

pub fn flat_params(net: &Network<f64>) -> Vec<f64> {
    net.layers().iter().flat_map(|l| l.weights().iter().chain(l.bias().iter()).copied().collect::<Vec<_>>()).collect()
}

pub fn flat_grads(g: &Gradients<f64>) -> Vec<f64> {
    g.weights.iter().zip(&g.biases).flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect()
}

pub fn perturbed(net: &Network<f64>, index: usize, delta: f64) -> Network<f64> {
    let mut out = net.clone();
    let mut offset = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        let nw = layer.weights().len();
        let nb = layer.bias().len();
        if index < offset + nw {
            let mut w = layer.weights().clone();
            let cols = w.ncols();
            let k = index - offset;
            w[[k / cols, k % cols]] += delta;
            out.set_weights(l, w).unwrap();
            return out;
        }
        if index < offset + nw + nb {
            let mut b = layer.bias().clone();
            b[index - offset - nw] += delta;
            out.set_bias(l, b).unwrap();
            return out;
        }
        offset += nw + nb;
    }
    panic!("parameter index out of range");
}

/// Central differences, or `None` when a one-sided difference disagrees (a ReLU boundary lies
/// within `h` of the point, so the loss is not differentiable there).
pub fn numeric_gradient(net: &Network<f64>, x: &Array2<f64>, labels: &[u8]) -> Option<Vec<f64>> {
    let h = 1e-5;
    let f0 = net.loss(x.view(), labels).unwrap();
    (0..flat_params(net).len())
        .map(|i| {
            let up = perturbed(net, i, h).loss(x.view(), labels).unwrap();
            let down = perturbed(net, i, -h).loss(x.view(), labels).unwrap();
            let (right, left) = ((up - f0) / h, (f0 - down) / h);
            ((right - left).abs() <= 1e-3 * (1.0 + right.abs())).then_some((up - down) / (2.0 * h))
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / (norm(a) + norm(b)).max(1e-12)
}

/// Relative error between backprop and central differences for `trials` random nets with at
/// most 500 parameters (every fifth one convolutional).
pub fn gradient_check(trials: u64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|trial| {
            let spec = if trial % 5 == 4 { tiny_cnn() } else { random_mlp(&mut rng) };
            let mut net: Network<f64> = build_network(&spec, trial).unwrap();
            // Zero biases put pre-activations exactly on the ReLU kink whenever a whole layer is off.
            for l in 0..net.layers().len() {
                let n = net.layers()[l].bias().len();
                net.set_bias(l, Array1::from_shape_fn(n, |_| rng.random_range(-0.1..0.1))).unwrap();
            }
            assert!(flat_params(&net).len() <= 500);
            let classes = net.classes();
            let (x, labels, numeric) = (0..10)
                .find_map(|_| {
                    let x = Array2::from_shape_fn((6, net.input_len()), |_| rng.random_range(-1.0..1.0));
                    let labels: Vec<u8> = (0..6).map(|_| rng.random_range(0..classes) as u8).collect();
                    numeric_gradient(&net, &x, &labels).map(|g| (x, labels, g))
                })
                .expect("a differentiable batch");
            let (_, grads, _) = net.loss_and_gradients(x.view(), &labels).unwrap();
            relative_error(&flat_grads(&grads), &numeric)
        })
        .collect()
}
