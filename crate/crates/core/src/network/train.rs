//! Minibatch SGD for the toy networks. Deterministic for a given seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::gemm_exact;
use crate::matrix::RealMatrix;
use crate::noise::derive_seed;

use super::dataset::{Dataset, SplitDataset};
use super::descriptor::{LayerActivation, LayerKind, NetworkDescriptor, TensorShape};
use super::im2col::{col2im, im2col, rows_to_tensor, tensor_to_rows, Tensor};
use super::model::{accuracy, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Held-out accuracy below this fails training.
    pub min_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            min_accuracy: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub model: ToyModel,
    pub test_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

struct LayerCache {
    input_shape: TensorShape,
    lowered: RealMatrix,
    pre: RealMatrix,
}

fn derivative(act: LayerActivation, z: f64) -> f64 {
    match act {
        LayerActivation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        LayerActivation::Identity => 1.0,
    }
}

fn forward_cached(net: &NetworkDescriptor, weights: &[RealMatrix], input: &Tensor) -> Result<Vec<LayerCache>> {
    let act = net.activation_between_layers;
    let last = weights.len() - 1;
    let mut current = input.clone();
    let mut caches = Vec::with_capacity(weights.len());
    for (l, (layer, w)) in net.layers.iter().zip(weights).enumerate() {
        let input_shape = current.shape;
        let out_shape = layer.output_shape(input_shape)?;
        let lowered = match &layer.kind {
            LayerKind::Conv(c) => im2col(&current, c)?,
            LayerKind::FullyConnected { .. } => current.flatten(),
        };
        let pre = gemm_exact(&lowered, w)?;
        if l < last {
            let a = RealMatrix::new(pre.rows(), pre.cols(), pre.data().iter().map(|&v| act.apply(v)).collect())?;
            current = match layer.kind {
                LayerKind::Conv(_) => rows_to_tensor(&a, out_shape)?,
                LayerKind::FullyConnected { .. } => Tensor::new(out_shape, a.into_data())?,
            };
        }
        caches.push(LayerCache {
            input_shape,
            lowered,
            pre,
        });
    }
    Ok(caches)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
fn softmax_xent(logits: &RealMatrix, labels: &[usize]) -> (f64, RealMatrix) {
    let (b, k) = logits.shape();
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= (exps[labels[i]] / z).ln();
        for c in 0..k {
            let p = exps[c] / z;
            grad[i * k + c] = (p - if c == labels[i] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, RealMatrix::from_parts_unchecked(b, k, grad))
}

fn gradients(
    net: &NetworkDescriptor,
    weights: &[RealMatrix],
    caches: &[LayerCache],
    logits_grad: RealMatrix,
) -> Result<Vec<RealMatrix>> {
    let act = net.activation_between_layers;
    let mut grads = vec![None; weights.len()];
    let mut dz = logits_grad;
    for l in (0..weights.len()).rev() {
        let cache = &caches[l];
        grads[l] = Some(gemm_exact(&cache.lowered.transpose(), &dz)?);
        if l == 0 {
            break;
        }
        let dx = gemm_exact(&dz, &weights[l].transpose())?;
        let da = match &net.layers[l].kind {
            LayerKind::Conv(c) => col2im(&dx, c, cache.input_shape)?,
            LayerKind::FullyConnected { .. } => Tensor::new(cache.input_shape, dx.into_data())?,
        };
        let prev = &caches[l - 1].pre;
        let da_rows = match net.layers[l - 1].kind {
            LayerKind::Conv(_) => tensor_to_rows(&da),
            LayerKind::FullyConnected { .. } => da.flatten(),
        };
        let data = da_rows
            .data()
            .iter()
            .zip(prev.data())
            .map(|(&g, &z)| g * derivative(act, z))
            .collect();
        dz = RealMatrix::from_parts_unchecked(prev.rows(), prev.cols(), data);
    }
    Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
}

fn he_init(net: &NetworkDescriptor, seed: u64) -> Result<Vec<RealMatrix>> {
    net.gemm_dims()?
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1417, l as u64]));
            let normal = Normal::new(0.0, (2.0 / d.m as f64).sqrt()).expect("positive std");
            RealMatrix::new(d.m, d.p, (0..d.m * d.p).map(|_| normal.sample(&mut rng)).collect())
        })
        .collect()
}

/// Exact-path accuracy, evaluated in chunks to bound memory.
pub fn evaluate(model: &ToyModel, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 128;
    let mut hits = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let trace = model.exact_trace(&data.inputs.slice_batch(start, end))?;
        let logits = trace.last().expect("at least one layer");
        hits += accuracy(logits, &data.labels[start..end]) * (end - start) as f64;
        start = end;
    }
    Ok(hits / data.len() as f64)
}

/// Trains `descriptor` on `data.train` and gates on accuracy over `data.test`.
pub fn train_toy(descriptor: &NetworkDescriptor, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    descriptor.validate()?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Domain(
            "epochs, batch size and learning rate must be positive".into(),
        ));
    }
    if descriptor.classes()? != data.train.classes {
        return Err(Error::Dimension(format!(
            "network has {} outputs, dataset has {} classes",
            descriptor.classes()?,
            data.train.classes
        )));
    }
    let mut weights = he_init(descriptor, cfg.seed)?;
    let mut velocity: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.data().len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5eed]));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.train.select(idx);
            let caches = forward_cached(descriptor, &weights, &batch.inputs).map_err(|e| diverged(epoch, e))?;
            let (loss, dlogits) = softmax_xent(&caches.last().expect("layers").pre, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss became non-finite in epoch {epoch}")));
            }
            let grads = gradients(descriptor, &weights, &caches, dlogits).map_err(|e| diverged(epoch, e))?;
            for ((w, v), g) in weights.iter_mut().zip(&mut velocity).zip(&grads) {
                let (rows, cols) = w.shape();
                let mut data = w.data().to_vec();
                for ((x, vel), &gr) in data.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *vel = cfg.momentum * *vel + gr + cfg.weight_decay * *x;
                    *x -= cfg.learning_rate * *vel;
                }
                *w = RealMatrix::new(rows, cols, data).map_err(|e| diverged(epoch, e))?;
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let model = ToyModel::new(descriptor.clone(), weights)?;
    let test_accuracy = evaluate(&model, &data.test)?;
    if test_accuracy < cfg.min_accuracy {
        return Err(Error::Training(format!(
            "held-out accuracy {:.4} below required {:.4} after {} epochs; epoch losses {:?}",
            test_accuracy, cfg.min_accuracy, cfg.epochs, epoch_losses
        )));
    }
    Ok(TrainReport {
        model,
        test_accuracy,
        epoch_losses,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    Error::Training(format!("training diverged in epoch {epoch}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{gaussian_blobs, patterned_images, LayerDescriptor};

    fn blob_net() -> NetworkDescriptor {
        NetworkDescriptor {
            layers: vec![
                LayerDescriptor::fully_connected("h", 8, 16),
                LayerDescriptor::fully_connected("out", 16, 4),
            ],
            input_shape: TensorShape::new(1, 8, 1, 1),
            activation_between_layers: LayerActivation::Relu,
        }
    }

    #[test]
    fn separable_blobs() {
        let data = gaussian_blobs(1200, 4, 8, 8.0, 1).unwrap().split_at(1000).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            min_accuracy: 0.99,
            ..TrainConfig::default()
        };
        let r = train_toy(&blob_net(), &data, &cfg).unwrap();
        assert!(r.test_accuracy >= 0.99);
        assert!(r.epoch_losses.last() < r.epoch_losses.first());
    }

    #[test]
    fn training_is_deterministic() {
        let data = gaussian_blobs(300, 4, 8, 6.0, 2).unwrap().split_at(200).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            min_accuracy: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train_toy(&blob_net(), &data, &cfg).unwrap();
        let b = train_toy(&blob_net(), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_failure_reports_diagnostics() {
        let data = gaussian_blobs(300, 4, 8, 0.0, 2).unwrap().split_at(200).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            min_accuracy: 0.99,
            ..TrainConfig::default()
        };
        match train_toy(&blob_net(), &data, &cfg) {
            Err(Error::Training(msg)) => assert!(msg.contains("held-out accuracy")),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let net = NetworkDescriptor {
            layers: vec![
                LayerDescriptor::conv("c", super::super::ConvSpec::square(2, 3, 3, 2, 1)),
                LayerDescriptor::fully_connected("fc", 3 * 3 * 3, 4),
            ],
            input_shape: TensorShape::new(3, 2, 5, 5),
            activation_between_layers: LayerActivation::Relu,
        };
        let weights = he_init(&net, 4).unwrap();
        let x = patterned_images(1, 0).unwrap(); // only used for a deterministic fill
        let input = Tensor::new(
            net.input_shape,
            x.inputs.data[..net.input_shape.len()].to_vec(),
        )
        .unwrap();
        let labels = [0, 3, 1];
        let loss = |w: &[RealMatrix]| {
            let c = forward_cached(&net, w, &input).unwrap();
            softmax_xent(&c.last().unwrap().pre, &labels).0
        };
        let caches = forward_cached(&net, &weights, &input).unwrap();
        let (_, dl) = softmax_xent(&caches.last().unwrap().pre, &labels);
        let grads = gradients(&net, &weights, &caches, dl).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            for idx in [0, 5, 11] {
                let (i, j) = (idx / weights[l].cols(), idx % weights[l].cols());
                let mut plus = weights.clone();
                plus[l].set(i, j, weights[l].get(i, j) + h).unwrap();
                let mut minus = weights.clone();
                minus[l].set(i, j, weights[l].get(i, j) - h).unwrap();
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let g = grads[l].get(i, j);
                assert!((fd - g).abs() <= 1e-6 + 1e-4 * g.abs(), "layer {l} ({i},{j}): {fd} vs {g}");
            }
        }
    }

    #[test]
    fn toy_cnn_reaches_the_accuracy_gate() {
        let data = patterned_images(2560, 11).unwrap().split_at(2048).unwrap();
        let cfg = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        let r = train_toy(&NetworkDescriptor::toy_cnn(1), &data, &cfg).unwrap();
        assert!(r.test_accuracy >= 0.9);
    }
}
