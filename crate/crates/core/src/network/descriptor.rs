use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::GemmDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        TensorShape {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.batch * self.item_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_batch(self, batch: usize) -> Self {
        TensorShape { batch, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvSpec {
    /// Square kernel, equal strides and padding.
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
        }
    }

    /// Inner GEMM dimension: one patch.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let out = |size: usize, k: usize, s: usize, p: usize, axis: &str| {
            let padded = size + 2 * p;
            if k > padded {
                return Err(Error::Domain(format!(
                    "kernel {axis} {k} exceeds padded input {axis} {padded}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            out(height, self.kernel_h, self.stride_h, self.pad_h, "height")?,
            out(width, self.kernel_w, self.stride_w, self.pad_w, "width")?,
        ))
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
            self.stride_h,
            self.stride_w,
        ];
        if dims.contains(&0) {
            return Err(Error::Domain(format!("conv dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(ConvSpec),
    FullyConnected { in_features: usize, out_features: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerDescriptor {
    pub fn conv(name: impl Into<String>, spec: ConvSpec) -> Self {
        LayerDescriptor {
            name: name.into(),
            kind: LayerKind::Conv(spec),
        }
    }

    pub fn fully_connected(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        LayerDescriptor {
            name: name.into(),
            kind: LayerKind::FullyConnected {
                in_features,
                out_features,
            },
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv(c) => c.out_channels,
            LayerKind::FullyConnected { out_features, .. } => out_features,
        }
    }

    /// Shape of the layer output. Fully connected layers produce
    /// `(batch, out_features, 1, 1)`.
    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape> {
        match self.kind {
            LayerKind::Conv(c) => {
                c.validate()?;
                if input.channels != c.in_channels {
                    return Err(Error::Dimension(format!(
                        "layer {:?} expects {} input channels, got {}",
                        self.name, c.in_channels, input.channels
                    )));
                }
                let (h, w) = c.output_hw(input.height, input.width)?;
                Ok(TensorShape::new(input.batch, c.out_channels, h, w))
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::Domain(format!(
                        "layer {:?} has a zero-sized dimension",
                        self.name
                    )));
                }
                if input.item_len() != in_features {
                    return Err(Error::Dimension(format!(
                        "layer {:?} expects {in_features} input features, got {}",
                        self.name,
                        input.item_len()
                    )));
                }
                Ok(TensorShape::new(input.batch, out_features, 1, 1))
            }
        }
    }
}

/// GEMM dimensions of a layer after im2col lowering.
///
/// Convolution: `n = batch * H_out * W_out`, `m = C_in * K_h * K_w`,
/// `p = C_out`. Fully connected: `n = batch`, `m = in`, `p = out`.
pub fn lower_to_gemm(layer: &LayerDescriptor, input: TensorShape) -> Result<GemmDims> {
    if input.batch == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    let out = layer.output_shape(input)?;
    match layer.kind {
        LayerKind::Conv(c) => GemmDims::new(out.batch * out.height * out.width, c.patch_len(), c.out_channels),
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => GemmDims::new(input.batch, in_features, out_features),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerActivation {
    #[default]
    Relu,
    Identity,
}

impl LayerActivation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            LayerActivation::Relu => v.max(0.0),
            LayerActivation::Identity => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub layers: Vec<LayerDescriptor>,
    pub input_shape: TensorShape,
    #[serde(default)]
    pub activation_between_layers: LayerActivation,
}

impl NetworkDescriptor {
    /// Output shape after every layer; fails if consecutive layers do not
    /// compose.
    pub fn layer_shapes(&self) -> Result<Vec<TensorShape>> {
        if self.layers.is_empty() {
            return Err(Error::Domain("network has no layers".into()));
        }
        let mut shape = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape)?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(drop)
    }

    pub fn gemm_dims(&self) -> Result<Vec<GemmDims>> {
        let mut shape = self.input_shape;
        let mut dims = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            dims.push(lower_to_gemm(layer, shape)?);
            shape = layer.output_shape(shape)?;
        }
        if dims.is_empty() {
            return Err(Error::Domain("network has no layers".into()));
        }
        Ok(dims)
    }

    pub fn with_batch(&self, batch: usize) -> Self {
        NetworkDescriptor {
            input_shape: self.input_shape.with_batch(batch),
            ..self.clone()
        }
    }

    pub fn classes(&self) -> Result<usize> {
        self.layers
            .last()
            .map(|l| l.output_channels())
            .ok_or_else(|| Error::Domain("network has no layers".into()))
    }

    /// The bundled 3-layer CNN for 3x32x32 inputs and 8 classes.
    pub fn toy_cnn(batch: usize) -> Self {
        NetworkDescriptor {
            layers: vec![
                LayerDescriptor::conv("conv1", ConvSpec::square(3, 8, 5, 2, 2)),
                LayerDescriptor::conv("conv2", ConvSpec::square(8, 16, 3, 2, 1)),
                LayerDescriptor::fully_connected("fc", 16 * 8 * 8, 8),
            ],
            input_shape: TensorShape::new(batch, 3, 32, 32),
            activation_between_layers: LayerActivation::Relu,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_lowering_example() {
        let l = LayerDescriptor::conv("c", ConvSpec::square(2, 5, 3, 1, 0));
        let d = lower_to_gemm(&l, TensorShape::new(1, 2, 4, 4)).unwrap();
        assert_eq!(d, GemmDims { n: 4, m: 18, p: 5 });
    }

    #[test]
    fn fc_lowering_example() {
        let l = LayerDescriptor::fully_connected("fc", 512, 10);
        let d = lower_to_gemm(&l, TensorShape::new(1, 512, 1, 1)).unwrap();
        assert_eq!(d, GemmDims { n: 1, m: 512, p: 10 });
        // Flattening a feature map works as long as the element count matches.
        let d = lower_to_gemm(&l, TensorShape::new(3, 32, 4, 4)).unwrap();
        assert_eq!(d, GemmDims { n: 3, m: 512, p: 10 });
    }

    #[test]
    fn resnet18_conv1() {
        let l = LayerDescriptor::conv("conv1", ConvSpec::square(3, 64, 7, 2, 3));
        let d = lower_to_gemm(&l, TensorShape::new(12, 3, 224, 224)).unwrap();
        assert_eq!((d.m, d.p), (147, 64));
        assert_eq!(d.n, 12 * 112 * 112);
        assert_eq!(d.n, 150_528);
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        let l = LayerDescriptor::conv("c", ConvSpec::square(1, 1, 7, 1, 1));
        assert!(matches!(
            lower_to_gemm(&l, TensorShape::new(1, 1, 4, 4)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn channel_mismatch() {
        let l = LayerDescriptor::conv("c", ConvSpec::square(3, 1, 1, 1, 0));
        assert!(lower_to_gemm(&l, TensorShape::new(1, 2, 4, 4)).is_err());
        let fc = LayerDescriptor::fully_connected("fc", 10, 2);
        assert!(lower_to_gemm(&fc, TensorShape::new(1, 3, 2, 2)).is_err());
    }

    #[test]
    fn toy_network_composes() {
        let net = NetworkDescriptor::toy_cnn(2);
        let shapes = net.layer_shapes().unwrap();
        assert_eq!(shapes[0], TensorShape::new(2, 8, 16, 16));
        assert_eq!(shapes[1], TensorShape::new(2, 16, 8, 8));
        assert_eq!(shapes[2], TensorShape::new(2, 8, 1, 1));
        let dims = net.gemm_dims().unwrap();
        assert_eq!(dims[0], GemmDims { n: 512, m: 75, p: 8 });
        assert_eq!(dims[1], GemmDims { n: 128, m: 72, p: 16 });
        assert_eq!(dims[2], GemmDims { n: 2, m: 1024, p: 8 });
        assert_eq!(net.classes().unwrap(), 8);
    }

    #[test]
    fn empty_network_rejected() {
        let net = NetworkDescriptor {
            layers: vec![],
            input_shape: TensorShape::new(1, 1, 1, 1),
            activation_between_layers: LayerActivation::Relu,
        };
        assert!(net.validate().is_err());
        assert!(net.gemm_dims().is_err());
    }

    #[test]
    fn descriptor_json_schema() {
        let text = r#"{
            "layers": [
                {"name": "c1", "kind": "conv", "in_channels": 3, "out_channels": 4,
                 "kernel_h": 3, "kernel_w": 3, "stride_h": 1, "stride_w": 1, "pad_h": 1, "pad_w": 1},
                {"name": "fc", "kind": "fully_connected", "in_features": 64, "out_features": 2}
            ],
            "input_shape": {"batch": 1, "channels": 3, "height": 4, "width": 4},
            "activation_between_layers": "relu"
        }"#;
        let net: NetworkDescriptor = serde_json::from_str(text).unwrap();
        assert_eq!(net.layers[0].kind, LayerKind::Conv(ConvSpec::square(3, 4, 3, 1, 1)));
        net.validate().unwrap();
        let again: NetworkDescriptor =
            serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        assert_eq!(again, net);
    }
}
