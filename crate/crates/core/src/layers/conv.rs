//! Stride-1 "same" cross-correlation via im2col + GEMM.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::linalg::gemm;
use crate::tensor::{Dims, Tensor4};

/// 2-D convolution with weights laid out `(out, in, filter_h, filter_w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter and input gradients of a [`ConvLayer`].
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        filter_h: usize,
        filter_w: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || filter_h == 0 || filter_w == 0 {
            return shape_err("conv layer dims must be >= 1");
        }
        let expected = out_channels * in_channels * filter_h * filter_w;
        if weights.len() != expected || bias.len() != out_channels {
            return shape_err(format!(
                "conv layer expects {expected} weights and {out_channels} biases, got {} and {}",
                weights.len(),
                bias.len()
            ));
        }
        Ok(ConvLayer { in_channels, out_channels, filter_h, filter_w, weights, bias })
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`) and biases of 0.1.
    pub fn init(in_channels: usize, out_channels: usize, filter_h: usize, filter_w: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * filter_h * filter_w;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weights = (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect();
        ConvLayer { in_channels, out_channels, filter_h, filter_w, weights, bias: vec![0.1; out_channels] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.filter_h * self.filter_w
    }

    fn pad(&self) -> (usize, usize) {
        ((self.filter_h - 1) / 2, (self.filter_w - 1) / 2)
    }

    fn check_input(&self, dims: Dims) -> Result<()> {
        if dims.channels != self.in_channels {
            return shape_err(format!("conv expects {} input channels, got {}", self.in_channels, dims.channels));
        }
        Ok(())
    }

    fn output_dims(&self, input: Dims) -> Dims {
        Dims::new(input.batch, self.out_channels, input.height, input.width)
    }
}

/// Upper bound on patch-matrix entries held at once.
const COLS_BUDGET: usize = 1 << 17;

/// Batch items unfolded together so each GEMM sees a wide right-hand side.
fn group_size(layer: &ConvLayer, hw: usize, batch: usize) -> usize {
    (COLS_BUDGET / (layer.patch_len() * hw).max(1)).clamp(1, batch.max(1))
}

/// Unfolds one batch item into columns `col0 .. col0 + H * W` of a patch
/// matrix with `in * fh * fw` rows and row stride `ld`.
fn im2col(layer: &ConvLayer, item: &[f64], h: usize, w: usize, cols: &mut [f64], ld: usize, col0: usize) {
    let (pad_t, pad_l) = layer.pad();
    let hw = h * w;
    let mut row = 0;
    for c in 0..layer.in_channels {
        let plane = &item[c * hw..(c + 1) * hw];
        for kh in 0..layer.filter_h {
            for kw in 0..layer.filter_w {
                let dst = &mut cols[row * ld + col0..row * ld + col0 + hw];
                // valid output columns: 0 <= ow + kw - pad_l < w
                let ow_lo = pad_l.saturating_sub(kw);
                let ow_hi = (w + pad_l).saturating_sub(kw).min(w);
                for oh in 0..h {
                    let out_row = &mut dst[oh * w..(oh + 1) * w];
                    let ih = oh + kh;
                    if ih < pad_t || ih - pad_t >= h || ow_lo >= ow_hi {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[(ih - pad_t) * w..(ih - pad_t + 1) * w];
                    out_row[..ow_lo].fill(0.0);
                    out_row[ow_hi..].fill(0.0);
                    let iw_lo = ow_lo + kw - pad_l;
                    out_row[ow_lo..ow_hi].copy_from_slice(&src_row[iw_lo..iw_lo + (ow_hi - ow_lo)]);
                }
                row += 1;
            }
        }
    }
}

/// Adds columns `col0 .. col0 + H * W` of a patch-matrix gradient back onto
/// one batch item.
fn col2im(layer: &ConvLayer, cols: &[f64], h: usize, w: usize, item: &mut [f64], ld: usize, col0: usize) {
    let (pad_t, pad_l) = layer.pad();
    let hw = h * w;
    let mut row = 0;
    for c in 0..layer.in_channels {
        let plane = &mut item[c * hw..(c + 1) * hw];
        for kh in 0..layer.filter_h {
            for kw in 0..layer.filter_w {
                let src = &cols[row * ld + col0..row * ld + col0 + hw];
                let ow_lo = pad_l.saturating_sub(kw);
                let ow_hi = (w + pad_l).saturating_sub(kw).min(w);
                for oh in 0..h {
                    let ih = oh + kh;
                    if ih < pad_t || ih - pad_t >= h || ow_lo >= ow_hi {
                        continue;
                    }
                    let iw_lo = ow_lo + kw - pad_l;
                    let dst_row = &mut plane[(ih - pad_t) * w + iw_lo..(ih - pad_t) * w + iw_lo + (ow_hi - ow_lo)];
                    for (d, s) in dst_row.iter_mut().zip(&src[oh * w + ow_lo..oh * w + ow_hi]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 cross-correlation with zero "same" padding; output keeps the
/// input's spatial size.
pub fn conv2d_forward(x: &Tensor4, layer: &ConvLayer) -> Result<Tensor4> {
    layer.check_input(x.dims())?;
    let dims = x.dims();
    let (h, w) = (dims.height, dims.width);
    let hw = h * w;
    let kk = layer.patch_len();
    let oc = layer.out_channels;
    let group = group_size(layer, hw, dims.batch);
    let mut y = Tensor4::zeros_unchecked(layer.output_dims(dims));
    let mut cols = vec![0.0; kk * group * hw];
    let mut prod = vec![0.0; oc * group * hw];
    for start in (0..dims.batch).step_by(group) {
        let g = group.min(dims.batch - start);
        let ld = g * hw;
        for i in 0..g {
            im2col(layer, x.item(start + i), h, w, &mut cols, ld, i * hw);
        }
        // prod (oc x g*hw) = W * cols
        gemm(oc, kk, ld, 1.0, &layer.weights, false, &cols, false, 0.0, &mut prod);
        for i in 0..g {
            let out = y.item_mut(start + i);
            for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
                let src = &prod[o * ld + i * hw..o * ld + (i + 1) * hw];
                for (d, s) in plane.iter_mut().zip(src) {
                    *d = s + layer.bias[o];
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d_forward`].
pub fn conv2d_backward(dy: &Tensor4, x: &Tensor4, layer: &ConvLayer) -> Result<ConvGrads> {
    let (dx, d_weights, d_bias) = conv2d_backward_impl(dy, x, layer, true)?;
    Ok(ConvGrads { dx: dx.expect("requested"), d_weights, d_bias })
}

/// Weight and bias gradients only, for a layer whose input needs no gradient.
pub(crate) fn conv2d_param_grads(dy: &Tensor4, x: &Tensor4, layer: &ConvLayer) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, dw, db) = conv2d_backward_impl(dy, x, layer, false)?;
    Ok((dw, db))
}

type ConvBackward = (Option<Tensor4>, Vec<f64>, Vec<f64>);

fn conv2d_backward_impl(dy: &Tensor4, x: &Tensor4, layer: &ConvLayer, need_dx: bool) -> Result<ConvBackward> {
    layer.check_input(x.dims())?;
    let dims = x.dims();
    if dy.dims() != layer.output_dims(dims) {
        return shape_err(format!(
            "conv2d_backward: dy {} does not match output dims {}",
            dy.dims(),
            layer.output_dims(dims)
        ));
    }
    let (h, w) = (dims.height, dims.width);
    let hw = h * w;
    let kk = layer.patch_len();
    let oc = layer.out_channels;
    let group = group_size(layer, hw, dims.batch);
    let mut dweights = vec![0.0; layer.weights.len()];
    let mut dbias = vec![0.0; oc];
    let mut dx = need_dx.then(|| Tensor4::zeros_unchecked(dims));
    let mut cols = vec![0.0; kk * group * hw];
    let mut dcols = if need_dx { vec![0.0; kk * group * hw] } else { Vec::new() };
    let mut dyg = vec![0.0; oc * group * hw];
    for start in (0..dims.batch).step_by(group) {
        let g = group.min(dims.batch - start);
        let ld = g * hw;
        for i in 0..g {
            let item = dy.item(start + i);
            for (o, plane) in item.chunks_exact(hw).enumerate() {
                dbias[o] += plane.iter().sum::<f64>();
                dyg[o * ld + i * hw..o * ld + (i + 1) * hw].copy_from_slice(plane);
            }
            im2col(layer, x.item(start + i), h, w, &mut cols, ld, i * hw);
        }
        // dW += dY_g * cols^T
        gemm(oc, ld, kk, 1.0, &dyg, false, &cols, true, 1.0, &mut dweights);
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dY_g
            gemm(kk, oc, ld, 1.0, &layer.weights, true, &dyg, false, 0.0, &mut dcols);
            for i in 0..g {
                col2im(layer, &dcols, h, w, dx.item_mut(start + i), ld, i * hw);
            }
        }
    }
    Ok((dx, dweights, dbias))
}
