use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::linalg::gemm;
use crate::tensor::{Dims, Tensor4};

/// Fully connected layer, `y = W x + b` per batch item. Inputs of any
/// `(B, C, H, W)` shape are read as flattened vectors of length `C * H * W`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub dx: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return shape_err("dense layer dims must be >= 1");
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return shape_err(format!(
                "dense {in_dim}->{out_dim} expects {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            ));
        }
        Ok(DenseLayer { in_dim, out_dim, weights, bias })
    }

    /// He-normal weights (`std = sqrt(2 / in_dim)`) and biases of 0.1.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        DenseLayer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.1; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, dims: Dims) -> Result<()> {
        if dims.item_len() != self.in_dim {
            return shape_err(format!(
                "dense expects {} inputs per item, got {} from {dims}",
                self.in_dim,
                dims.item_len()
            ));
        }
        Ok(())
    }
}

/// Output has dims `(B, out_dim, 1, 1)`.
pub fn dense_forward(x: &Tensor4, layer: &DenseLayer) -> Result<Tensor4> {
    layer.check_input(x.dims())?;
    let batch = x.dims().batch;
    let mut y = Tensor4::zeros_unchecked(Dims::new(batch, layer.out_dim, 1, 1));
    let out = y.as_mut_slice();
    for row in out.chunks_exact_mut(layer.out_dim) {
        row.copy_from_slice(&layer.bias);
    }
    gemm(batch, layer.in_dim, layer.out_dim, 1.0, x.as_slice(), false, &layer.weights, true, 1.0, out);
    Ok(y)
}

/// Gradients of [`dense_forward`]; `dx` has the dims of `x`.
pub fn dense_backward(dy: &Tensor4, x: &Tensor4, layer: &DenseLayer) -> Result<DenseGrads> {
    layer.check_input(x.dims())?;
    let batch = x.dims().batch;
    if dy.dims() != Dims::new(batch, layer.out_dim, 1, 1) {
        return shape_err(format!(
            "dense_backward: dy {} does not match ({batch}, {}, 1, 1)",
            dy.dims(),
            layer.out_dim
        ));
    }
    let g = dy.as_slice();
    let mut d_bias = vec![0.0; layer.out_dim];
    for row in g.chunks_exact(layer.out_dim) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_weights = vec![0.0; layer.weights.len()];
    gemm(layer.out_dim, batch, layer.in_dim, 1.0, g, true, x.as_slice(), false, 0.0, &mut d_weights);
    let mut dx = Tensor4::zeros_unchecked(x.dims());
    gemm(batch, layer.out_dim, layer.in_dim, 1.0, g, false, &layer.weights, false, 0.0, dx.as_mut_slice());
    Ok(DenseGrads { dx, d_weights, d_bias })
}
