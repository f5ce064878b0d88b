use super::{PoolSpec, RegionGrid};
use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Tensor4};

/// Mean of every region.
pub fn avg_pool_forward(x: &Tensor4, spec: &PoolSpec) -> Result<Tensor4> {
    let grid = RegionGrid::new(spec, x.dims())?;
    let scale = 1.0 / grid.k() as f64;
    let src = x.as_slice();
    let mut y = Tensor4::zeros_unchecked(grid.out_dims);
    let out = y.as_mut_slice();
    grid.for_each(|o, _, base| {
        out[o] = grid.offsets.iter().map(|&p| src[base + p]).sum::<f64>() * scale;
    });
    Ok(y)
}

/// Spreads each region's upstream gradient evenly over its elements.
pub fn avg_pool_backward(dy: &Tensor4, spec: &PoolSpec, x_dims: Dims) -> Result<Tensor4> {
    let grid = RegionGrid::new(spec, x_dims)?;
    if dy.dims() != grid.out_dims {
        return shape_err(format!("avg_pool_backward: dy {} does not match pooled dims {}", dy.dims(), grid.out_dims));
    }
    let scale = 1.0 / grid.k() as f64;
    let g = dy.as_slice();
    let mut dx = Tensor4::zeros_unchecked(x_dims);
    let dst = dx.as_mut_slice();
    grid.for_each(|o, _, base| {
        let share = g[o] * scale;
        for &p in &grid.offsets {
            dst[base + p] += share;
        }
    });
    Ok(dx)
}

/// Region-local position of the maximum of every region, recorded by
/// [`max_pool_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArgmaxCache {
    spec: PoolSpec,
    in_dims: Dims,
    positions: Vec<usize>,
}

impl ArgmaxCache {
    pub fn in_dims(&self) -> Dims {
        self.in_dims
    }

    /// Winning position of each output element, in output storage order.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

/// Maximum of every region. Ties go to the smallest row-major position.
pub fn max_pool_forward(x: &Tensor4, spec: &PoolSpec) -> Result<(Tensor4, ArgmaxCache)> {
    let grid = RegionGrid::new(spec, x.dims())?;
    let src = x.as_slice();
    let mut y = Tensor4::zeros_unchecked(grid.out_dims);
    let mut positions = vec![0; grid.out_dims.len()];
    let out = y.as_mut_slice();
    grid.for_each(|o, _, base| {
        let mut best = 0;
        let mut best_val = src[base + grid.offsets[0]];
        for (p, &off) in grid.offsets.iter().enumerate().skip(1) {
            let v = src[base + off];
            if v > best_val {
                best = p;
                best_val = v;
            }
        }
        out[o] = best_val;
        positions[o] = best;
    });
    let cache = ArgmaxCache { spec: *spec, in_dims: x.dims(), positions };
    Ok((y, cache))
}

/// Routes each region's gradient to its cached argmax.
pub fn max_pool_backward(dy: &Tensor4, cache: &ArgmaxCache, x_dims: Dims) -> Result<Tensor4> {
    if cache.in_dims != x_dims {
        return shape_err(format!("max_pool_backward: cache was built for {} but x_dims is {x_dims}", cache.in_dims));
    }
    let grid = RegionGrid::new(&cache.spec, x_dims)?;
    if dy.dims() != grid.out_dims {
        return shape_err(format!("max_pool_backward: dy {} does not match pooled dims {}", dy.dims(), grid.out_dims));
    }
    let g = dy.as_slice();
    let mut dx = Tensor4::zeros_unchecked(x_dims);
    let dst = dx.as_mut_slice();
    grid.for_each(|o, _, base| {
        dst[base + grid.offsets[cache.positions[o]]] += g[o];
    });
    Ok(dx)
}
