use super::{LocationWeights, PoolSpec, RegionGrid};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor4;

fn grid_for(x: &Tensor4, spec: &PoolSpec, w: &LocationWeights, op: &str) -> Result<RegionGrid> {
    spec.require_non_overlapping(op)?;
    let grid = RegionGrid::new(spec, x.dims())?;
    w.check_region(x.dims().channels, grid.k())?;
    Ok(grid)
}

/// Location-weighted pooling: each channel dots its regions with its own
/// position-indexed weight row.
pub fn lbpn_forward(x: &Tensor4, spec: &PoolSpec, w: &LocationWeights) -> Result<Tensor4> {
    let grid = grid_for(x, spec, w, "lbpn_forward")?;
    let src = x.as_slice();
    let mut y = Tensor4::zeros_unchecked(grid.out_dims);
    let out = y.as_mut_slice();
    grid.for_each(|o, c, base| {
        out[o] = w.row(c).iter().zip(&grid.offsets).map(|(wp, &p)| wp * src[base + p]).sum();
    });
    Ok(y)
}

/// Returns `(dx, dW)`; `dW` accumulates over the batch and all regions of a channel.
pub fn lbpn_backward(
    dy: &Tensor4,
    x: &Tensor4,
    spec: &PoolSpec,
    w: &LocationWeights,
) -> Result<(Tensor4, LocationWeights)> {
    let grid = grid_for(x, spec, w, "lbpn_backward")?;
    if dy.dims() != grid.out_dims {
        return shape_err(format!("lbpn_backward: dy {} does not match pooled dims {}", dy.dims(), grid.out_dims));
    }
    let src = x.as_slice();
    let g = dy.as_slice();
    let mut dx = Tensor4::zeros_unchecked(x.dims());
    let mut dw = w.zeros_like();
    let dst = dx.as_mut_slice();
    grid.for_each(|o, c, base| {
        let go = g[o];
        let wrow = w.row(c);
        let grow = dw.row_mut(c);
        for (p, &off) in grid.offsets.iter().enumerate() {
            dst[base + off] += wrow[p] * go;
            grow[p] += src[base + off] * go;
        }
    });
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::avg_pool_forward;

    fn region() -> Tensor4 {
        Tensor4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn weights() -> LocationWeights {
        LocationWeights::new(1, 4, vec![0.4, 0.3, 0.2, 0.1]).unwrap()
    }

    #[test]
    fn forward_dot_product() {
        let y = lbpn_forward(&region(), &PoolSpec::default(), &weights()).unwrap();
        let oracle: f64 = [1.0, 2.0, 3.0, 4.0].iter().zip([0.4, 0.3, 0.2, 0.1]).map(|(a, w)| a * w).sum();
        assert!((y.as_slice()[0] - 2.0).abs() < 1e-15);
        assert_eq!(y.as_slice()[0], oracle);
    }

    #[test]
    fn uniform_weights_match_avg() {
        let x = Tensor4::from_vec((1, 2, 2, 4), (0..16).map(|i| (i * i % 7) as f64).collect()).unwrap();
        let spec = PoolSpec::default();
        let w = LocationWeights::uniform(2, 4).unwrap();
        let a = lbpn_forward(&x, &spec, &w).unwrap();
        let b = avg_pool_forward(&x, &spec).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn one_hot_selects_position() {
        let spec = PoolSpec::default();
        for p in 0..4 {
            let mut row = vec![0.0; 4];
            row[p] = 1.0;
            let w = LocationWeights::from_row(1, &row).unwrap();
            let y = lbpn_forward(&region(), &spec, &w).unwrap();
            assert_eq!(y.as_slice()[0], (p + 1) as f64);
        }
    }

    #[test]
    fn backward_examples() {
        let spec = PoolSpec::default();
        let dy = Tensor4::new_filled((1, 1, 1, 1), 1.0).unwrap();
        let (dx, dw) = lbpn_backward(&dy, &region(), &spec, &weights()).unwrap();
        assert_eq!(dx.as_slice(), &[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(dw.row(0), &[1.0, 2.0, 3.0, 4.0]);

        let zero = Tensor4::zeros((1, 1, 1, 1)).unwrap();
        let (dx, dw) = lbpn_backward(&zero, &region(), &spec, &weights()).unwrap();
        assert_eq!(dx.sum(), 0.0);
        assert!(dw.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_gradient_accumulates_over_batch() {
        let spec = PoolSpec::default();
        let twice = Tensor4::from_vec((2, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let dy = Tensor4::new_filled((2, 1, 1, 1), 1.0).unwrap();
        let (_, dw) = lbpn_backward(&dy, &twice, &spec, &weights()).unwrap();
        assert_eq!(dw.row(0), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn shape_mismatches() {
        let spec = PoolSpec::default();
        let w3 = LocationWeights::uniform(1, 3).unwrap();
        assert!(lbpn_forward(&region(), &spec, &w3).is_err());
        let w2c = LocationWeights::uniform(2, 4).unwrap();
        assert!(lbpn_forward(&region(), &spec, &w2c).is_err());
        let overlapping = PoolSpec::new(2, 2, 1).unwrap();
        let x = Tensor4::zeros((1, 1, 3, 3)).unwrap();
        assert!(lbpn_forward(&x, &overlapping, &weights()).is_err());
    }
}
