use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{error_matrix, gemm_approx, gemm_exact};
use crate::matrix::RealMatrix;
use crate::multiplier::MultiplierModel;
use crate::noise::NoisePlan;

use super::descriptor::{LayerKind, NetworkDescriptor, TensorShape};
use super::im2col::{im2col, rows_to_tensor, Tensor};

/// A small trained network: one weight matrix of shape `m x p` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    descriptor: NetworkDescriptor,
    weights: Vec<RealMatrix>,
    classes: usize,
}

impl ToyModel {
    /// Weights are rounded to binary32 on the way in.
    pub fn new(descriptor: NetworkDescriptor, weights: Vec<RealMatrix>) -> Result<Self> {
        let dims = descriptor.gemm_dims()?;
        if weights.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} layers but {} weight matrices",
                dims.len(),
                weights.len()
            )));
        }
        for (l, (w, d)) in weights.iter().zip(&dims).enumerate() {
            if w.shape() != (d.m, d.p) {
                return Err(Error::Dimension(format!(
                    "layer {l} weights are {:?}, expected {}x{}",
                    w.shape(),
                    d.m,
                    d.p
                )));
            }
        }
        let weights = weights
            .iter()
            .map(RealMatrix::quantize_f32)
            .collect::<Result<Vec<_>>>()?;
        let classes = descriptor.classes()?;
        Ok(ToyModel {
            descriptor,
            weights,
            classes,
        })
    }

    pub fn descriptor(&self) -> &NetworkDescriptor {
        &self.descriptor
    }

    pub fn weights(&self) -> &[RealMatrix] {
        &self.weights
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let want = self.descriptor.input_shape;
        let got = input.shape;
        if (got.channels, got.height, got.width) != (want.channels, want.height, want.width) {
            return Err(Error::Dimension(format!(
                "model expects items of shape {}x{}x{}, got {}x{}x{}",
                want.channels, want.height, want.width, got.channels, got.height, got.width
            )));
        }
        Ok(())
    }

    /// Pre-activation outputs of every layer on the exact path.
    pub fn exact_trace(&self, input: &Tensor) -> Result<Vec<RealMatrix>> {
        self.check_input(input)?;
        self.run(input, |_, x, w| gemm_exact(x, w))
    }

    /// Pre-activation outputs of every layer with `multiplier` in place of
    /// exact products. Layer `l` draws noise from `plan.layer_id + l`.
    pub fn approx_trace(
        &self,
        input: &Tensor,
        multiplier: &MultiplierModel,
        plan: NoisePlan,
    ) -> Result<Vec<RealMatrix>> {
        self.check_input(input)?;
        self.run(input, |l, x, w| {
            gemm_approx(x, w, multiplier, plan.for_layer(plan.layer_id + l as u64))
        })
    }

    fn run(
        &self,
        input: &Tensor,
        mut gemm: impl FnMut(usize, &RealMatrix, &RealMatrix) -> Result<RealMatrix>,
    ) -> Result<Vec<RealMatrix>> {
        let act = self.descriptor.activation_between_layers;
        let last = self.weights.len() - 1;
        let mut shape = input.shape;
        let mut current = quantize(input)?;
        let mut trace = Vec::with_capacity(self.weights.len());
        for (l, (layer, w)) in self.descriptor.layers.iter().zip(&self.weights).enumerate() {
            let out_shape = layer.output_shape(shape)?;
            let lowered = match &layer.kind {
                LayerKind::Conv(c) => im2col(&current, c)?,
                LayerKind::FullyConnected { .. } => current.flatten(),
            };
            let pre = gemm(l, &lowered, w)?;
            if l < last {
                let activated =
                    RealMatrix::new(pre.rows(), pre.cols(), pre.data().iter().map(|&v| act.apply(v)).collect())?;
                let next = match layer.kind {
                    LayerKind::Conv(_) => rows_to_tensor(&activated, out_shape)?,
                    LayerKind::FullyConnected { .. } => Tensor::new(out_shape, activated.into_data())?,
                };
                current = quantize(&next)?;
            }
            trace.push(pre);
            shape = out_shape;
        }
        Ok(trace)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (l, w) in self.weights.iter().enumerate() {
            let name = format!("layer{l}.bin");
            w.write_bin(dir.join(&name))?;
            files.push(name);
        }
        let manifest = ModelManifest {
            descriptor: self.descriptor.clone(),
            classes: self.classes,
            weights: files,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: ModelManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let weights = manifest
            .weights
            .iter()
            .map(|f| RealMatrix::read_bin(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let model = ToyModel::new(manifest.descriptor, weights)?;
        if model.classes != manifest.classes {
            return Err(Error::Format(format!(
                "manifest claims {} classes, network produces {}",
                manifest.classes, model.classes
            )));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    descriptor: NetworkDescriptor,
    classes: usize,
    weights: Vec<String>,
}

fn quantize(t: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = t.data.iter().map(|&v| v as f32 as f64).collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            row: pos / t.shape.item_len(),
            col: pos % t.shape.item_len(),
            detail: "activation does not fit binary32".into(),
        });
    }
    Tensor::new(t.shape, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: RealMatrix,
    /// `||C'_l - C_l||_F^2` per layer, measured before the activation.
    pub per_layer_frob_sq: Vec<f64>,
}

/// Runs the exact and approximate paths side by side.
///
/// The approximate path feeds its own (perturbed) activations forward; the
/// exact path never sees any error, so the distortion at layer `l >= 2`
/// includes error carried in from earlier layers.
pub fn forward(
    model: &ToyModel,
    input: &Tensor,
    multiplier: &MultiplierModel,
    plan: NoisePlan,
) -> Result<ForwardOutput> {
    let exact = model.exact_trace(input)?;
    forward_against(model, input, &exact, multiplier, plan)
}

/// [`forward`] with a precomputed exact trace.
pub fn forward_against(
    model: &ToyModel,
    input: &Tensor,
    exact: &[RealMatrix],
    multiplier: &MultiplierModel,
    plan: NoisePlan,
) -> Result<ForwardOutput> {
    let approx = model.approx_trace(input, multiplier, plan)?;
    if approx.len() != exact.len() {
        return Err(Error::Dimension("exact trace has the wrong number of layers".into()));
    }
    let per_layer_frob_sq = exact
        .iter()
        .zip(&approx)
        .map(|(c, c2)| error_matrix(c, c2).map(|(_, s)| s.frob_sq))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardOutput {
        logits: approx.into_iter().last().expect("at least one layer"),
        per_layer_frob_sq,
    })
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn predict_classes(logits: &RealMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy.
pub fn accuracy(logits: &RealMatrix, labels: &[usize]) -> f64 {
    let predicted = predict_classes(logits);
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Input shape `(batch, channels, height, width)` the model accepts for a
/// given batch size.
pub fn batch_shape(model: &ToyModel, batch: usize) -> TensorShape {
    model.descriptor.input_shape.with_batch(batch)
}
