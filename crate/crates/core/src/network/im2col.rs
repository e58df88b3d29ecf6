//! im2col lowering and its adjoint.
//!
//! Patch rows are ordered `(batch, out_y, out_x)`; patch columns are ordered
//! `(channel, ky, kx)`. Kernel matrices use the same column order for their
//! rows, so `im2col(x) * kernel` is the convolution with output channels as
//! columns.

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;

use super::descriptor::{ConvSpec, TensorShape};

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() || shape.is_empty() {
            return Err(Error::Dimension(format!(
                "tensor {shape:?} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let s = &self.shape;
        self.data[((b * s.channels + c) * s.height + y) * s.width + x]
    }

    /// One row per batch item, `(c, y, x)` flattened.
    pub fn flatten(&self) -> RealMatrix {
        RealMatrix::from_parts_unchecked(self.shape.batch, self.shape.item_len(), self.data.clone())
    }

    /// Items `start..end` of the batch.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let item = self.shape.item_len();
        Tensor {
            shape: self.shape.with_batch(end - start),
            data: self.data[start * item..end * item].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_conv_input(input: TensorShape, conv: &ConvSpec) -> Result<(usize, usize)> {
    if input.channels != conv.in_channels {
        return Err(Error::Dimension(format!(
            "conv expects {} channels, input has {}",
            conv.in_channels, input.channels
        )));
    }
    conv.output_hw(input.height, input.width)
}

/// Patch matrix of shape `(batch * H_out * W_out) x (C_in * K_h * K_w)`.
pub fn im2col(input: &Tensor, conv: &ConvSpec) -> Result<RealMatrix> {
    let s = input.shape;
    let (oh, ow) = check_conv_input(s, conv)?;
    let m = conv.patch_len();
    let n = s.batch * oh * ow;
    let mut out = vec![0.0; n * m];
    for b in 0..s.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                let dst = &mut out[row * m..(row + 1) * m];
                let mut col = 0;
                for c in 0..s.channels {
                    for ky in 0..conv.kernel_h {
                        let iy = (oy * conv.stride_h + ky) as isize - conv.pad_h as isize;
                        for kx in 0..conv.kernel_w {
                            let ix = (ox * conv.stride_w + kx) as isize - conv.pad_w as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < s.height && (ix as usize) < s.width {
                                dst[col] = input.at(b, c, iy as usize, ix as usize);
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(RealMatrix::from_parts_unchecked(n, m, out))
}

/// Adjoint of [`im2col`]: scatters patch-matrix values back onto the input
/// grid, summing overlaps.
pub fn col2im(cols: &RealMatrix, conv: &ConvSpec, input: TensorShape) -> Result<Tensor> {
    let (oh, ow) = check_conv_input(input, conv)?;
    let m = conv.patch_len();
    if cols.shape() != (input.batch * oh * ow, m) {
        return Err(Error::Dimension(format!(
            "patch matrix {:?} does not match conv output {}x{}",
            cols.shape(),
            input.batch * oh * ow,
            m
        )));
    }
    let mut out = Tensor::zeros(input);
    let s = input;
    for b in 0..s.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row((b * oh + oy) * ow + ox);
                let mut col = 0;
                for c in 0..s.channels {
                    for ky in 0..conv.kernel_h {
                        let iy = (oy * conv.stride_h + ky) as isize - conv.pad_h as isize;
                        for kx in 0..conv.kernel_w {
                            let ix = (ox * conv.stride_w + kx) as isize - conv.pad_w as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < s.height && (ix as usize) < s.width {
                                let idx = ((b * s.channels + c) * s.height + iy as usize) * s.width
                                    + ix as usize;
                                out.data[idx] += row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reshapes a conv GEMM output (rows `(b, y, x)`, columns channels) to NCHW.
pub fn rows_to_tensor(y: &RealMatrix, shape: TensorShape) -> Result<Tensor> {
    let spatial = shape.height * shape.width;
    if y.shape() != (shape.batch * spatial, shape.channels) {
        return Err(Error::Dimension(format!(
            "GEMM output {:?} does not reshape to {shape:?}",
            y.shape()
        )));
    }
    let mut data = vec![0.0; shape.len()];
    for b in 0..shape.batch {
        for pos in 0..spatial {
            let src = y.row(b * spatial + pos);
            for (c, &v) in src.iter().enumerate() {
                data[(b * shape.channels + c) * spatial + pos] = v;
            }
        }
    }
    Tensor::new(shape, data)
}

/// Inverse of [`rows_to_tensor`].
pub fn tensor_to_rows(t: &Tensor) -> RealMatrix {
    let s = t.shape;
    let spatial = s.height * s.width;
    let mut data = vec![0.0; s.len()];
    for b in 0..s.batch {
        for c in 0..s.channels {
            for pos in 0..spatial {
                data[(b * spatial + pos) * s.channels + c] = t.data[(b * s.channels + c) * spatial + pos];
            }
        }
    }
    RealMatrix::from_parts_unchecked(s.batch * spatial, s.channels, data)
}
