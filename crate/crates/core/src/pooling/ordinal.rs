//! Ordinal pooling: sort each region, then weight the elements by rank.
//!
//! The permutation found in the forward pass is treated as a constant in the
//! backward pass, which makes the operator piecewise linear in its input. Away
//! from ties the gradients below are exact.

use super::{PoolSpec, RankWeights, RegionGrid};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Dims, Tensor4};

/// Region-local positions sorted by descending activation.
///
/// Equal values keep ascending position order.
pub fn rank_region(region: &[f64]) -> Result<Vec<usize>> {
    if region.is_empty() {
        return shape_err("rank_region: empty region");
    }
    let mut perm = vec![0; region.len()];
    rank_into(region, &mut perm)?;
    Ok(perm)
}

fn rank_into(values: &[f64], perm: &mut [usize]) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("cannot rank a region containing NaN: {values:?}")));
    }
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    if values.len() <= 16 {
        // insertion sort; only a strictly larger value moves ahead, so it is stable
        for i in 1..perm.len() {
            let cur = perm[i];
            let mut j = i;
            while j > 0 && values[cur] > values[perm[j - 1]] {
                perm[j] = perm[j - 1];
                j -= 1;
            }
            perm[j] = cur;
        }
    } else {
        perm.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("no NaN"));
    }
    Ok(())
}

/// Per-region rank orderings cached by [`opn_forward`] for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RankPermutation {
    spec: PoolSpec,
    in_dims: Dims,
    k: usize,
    order: Vec<usize>,
}

impl RankPermutation {
    pub fn in_dims(&self) -> Dims {
        self.in_dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of regions.
    pub fn len(&self) -> usize {
        self.order.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Positions of region `i` (output storage order) from rank 0 downwards.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.order[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks_exact(self.k)
    }
}

fn checked_grid(x_dims: Dims, spec: &PoolSpec, w: &RankWeights, op: &str) -> Result<RegionGrid> {
    spec.require_non_overlapping(op)?;
    let grid = RegionGrid::new(spec, x_dims)?;
    w.check_region(x_dims.channels, grid.k())?;
    Ok(grid)
}

/// Ordinal pooling forward pass.
///
/// For a region of channel `j` with activations sorted so that
/// `a[perm[0]] >= a[perm[1]] >= ...`, the output is `sum_r w[j][r] * a[perm[r]]`.
pub fn opn_forward(x: &Tensor4, spec: &PoolSpec, w: &RankWeights) -> Result<(Tensor4, RankPermutation)> {
    let grid = checked_grid(x.dims(), spec, w, "opn_forward")?;
    let k = grid.k();
    let src = x.as_slice();
    let mut y = Tensor4::zeros_unchecked(grid.out_dims);
    let mut order = vec![0; grid.out_dims.len() * k];
    let mut vals = vec![0.0; k];
    let mut failed = None;
    let out = y.as_mut_slice();
    grid.for_each(|o, c, base| {
        if failed.is_some() {
            return;
        }
        for (v, &off) in vals.iter_mut().zip(&grid.offsets) {
            *v = src[base + off];
        }
        let perm = &mut order[o * k..(o + 1) * k];
        if let Err(e) = rank_into(&vals, perm) {
            failed = Some(e);
            return;
        }
        out[o] = w.row(c).iter().zip(perm.iter()).map(|(wr, &p)| wr * vals[p]).sum();
    });
    if let Some(e) = failed {
        return Err(e);
    }
    let perms = RankPermutation { spec: *spec, in_dims: x.dims(), k, order };
    Ok((y, perms))
}

/// Ordinal pooling backward pass with the cached permutation held fixed.
///
/// Returns `(dx, dW)`: the element of rank `r` receives `w[j][r] * dy`, and
/// `dW[j][r]` sums `a[perm[r]] * dy` over every region of channel `j`.
pub fn opn_backward(
    dy: &Tensor4,
    x: &Tensor4,
    perms: &RankPermutation,
    w: &RankWeights,
) -> Result<(Tensor4, RankWeights)> {
    if perms.in_dims != x.dims() {
        return shape_err(format!("opn_backward: permutation cache built for {} but x is {}", perms.in_dims, x.dims()));
    }
    let grid = checked_grid(x.dims(), &perms.spec, w, "opn_backward")?;
    if dy.dims() != grid.out_dims {
        return shape_err(format!("opn_backward: dy {} does not match pooled dims {}", dy.dims(), grid.out_dims));
    }
    let k = grid.k();
    let src = x.as_slice();
    let g = dy.as_slice();
    let mut dx = Tensor4::zeros_unchecked(x.dims());
    let mut dw = w.zeros_like();
    let dst = dx.as_mut_slice();
    grid.for_each(|o, c, base| {
        let go = g[o];
        let wrow = w.row(c);
        let grow = dw.row_mut(c);
        for (r, &p) in perms.order[o * k..(o + 1) * k].iter().enumerate() {
            let at = base + grid.offsets[p];
            dst[at] += wrow[r] * go;
            grow[r] += src[at] * go;
        }
    });
    Ok((dx, dw))
}

/// Ordinal pooling with weights constrained to the simplex: the effective
/// weights are the row-wise softmax of the logits `theta`.
///
/// Returns the output, the permutation cache and the effective weights.
pub fn opn_softmax_forward(
    x: &Tensor4,
    spec: &PoolSpec,
    theta: &RankWeights,
) -> Result<(Tensor4, RankPermutation, RankWeights)> {
    let w_eff = theta.softmax_rows();
    let (y, perms) = opn_forward(x, spec, &w_eff)?;
    Ok((y, perms, w_eff))
}

/// Backward pass of [`opn_softmax_forward`]; returns `(dx, dTheta)`.
pub fn opn_softmax_backward(
    dy: &Tensor4,
    x: &Tensor4,
    perms: &RankPermutation,
    theta: &RankWeights,
    w_eff: &RankWeights,
) -> Result<(Tensor4, RankWeights)> {
    theta.check_same_shape(w_eff)?;
    let (dx, dw_raw) = opn_backward(dy, x, perms, w_eff)?;
    let mut dtheta = dw_raw.zeros_like();
    for j in 0..theta.channels() {
        let w = w_eff.row(j);
        let g = dw_raw.row(j);
        let mean: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
        for (out, (wr, gr)) in dtheta.row_mut(j).iter_mut().zip(w.iter().zip(g)) {
            *out = wr * (gr - mean);
        }
    }
    Ok((dx, dtheta))
}
