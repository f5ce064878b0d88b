use approx::assert_relative_eq;
use proptest::prelude::*;

use ordpool::pooling::{
    avg_pool_backward, avg_pool_forward, equivalent_conv_param_count, init_rank_weights, lbpn_forward,
    max_pool_backward, max_pool_forward, opn_backward, opn_forward, opn_softmax_forward, pooling_param_count,
    rank_region, LocationWeights, PoolSpec, PoolingKind, RankWeights,
};
use ordpool::Tensor4;

/// Tensors tiled by 2x2/2 windows, values in [-10, 10).
fn pool_input() -> impl Strategy<Value = Tensor4> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(b, c, hh, ww)| {
        let dims = (b, c, 2 * hh, 2 * ww);
        prop::collection::vec(-10.0f64..10.0, b * c * 4 * hh * ww)
            .prop_map(move |v| Tensor4::from_vec(dims, v).unwrap())
    })
}

fn rank_weights(channels: usize) -> impl Strategy<Value = RankWeights> {
    prop::collection::vec(-2.0f64..2.0, channels * 4).prop_map(move |v| RankWeights::new(channels, 4, v).unwrap())
}

/// Applies `f` to every 2x2 region's element list, rebuilding the tensor.
fn map_regions(x: &Tensor4, mut f: impl FnMut(&mut [f64; 4])) -> Tensor4 {
    let d = x.dims();
    let mut out = x.clone();
    for b in 0..d.batch {
        for c in 0..d.channels {
            for i in (0..d.height).step_by(2) {
                for j in (0..d.width).step_by(2) {
                    let pos = [(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)];
                    let mut vals = pos.map(|(h, w)| x.get(b, c, h, w).unwrap());
                    f(&mut vals);
                    for ((h, w), v) in pos.into_iter().zip(vals) {
                        out.set(b, c, h, w, v).unwrap();
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn opn_with_uniform_weights_is_avg_pooling(x in pool_input()) {
        let spec = PoolSpec::default();
        let w = RankWeights::uniform(x.dims().channels, 4).unwrap();
        let (y, perm) = opn_forward(&x, &spec, &w).unwrap();
        let avg = avg_pool_forward(&x, &spec).unwrap();
        prop_assert!(y.max_abs_diff(&avg).unwrap() <= 1e-12);

        let dy = y.map(|v| v.sin());
        let (dx, _) = opn_backward(&dy, &x, &perm, &w).unwrap();
        let dx_avg = avg_pool_backward(&dy, &spec, x.dims()).unwrap();
        prop_assert!(dx.max_abs_diff(&dx_avg).unwrap() <= 1e-12);
    }

    #[test]
    fn opn_with_rank0_selector_is_max_pooling(x in pool_input()) {
        let spec = PoolSpec::default();
        let w = RankWeights::max_selector(x.dims().channels, 4).unwrap();
        let (y, perm) = opn_forward(&x, &spec, &w).unwrap();
        let (ymax, cache) = max_pool_forward(&x, &spec).unwrap();
        prop_assert_eq!(y.max_abs_diff(&ymax).unwrap(), 0.0);

        let dy = y.map(|v| v.cos());
        let (dx, _) = opn_backward(&dy, &x, &perm, &w).unwrap();
        let dx_max = max_pool_backward(&dy, &cache, x.dims()).unwrap();
        prop_assert_eq!(dx.max_abs_diff(&dx_max).unwrap(), 0.0);
    }

    #[test]
    fn opn_ignores_order_inside_a_region(x in pool_input(), rot in 0usize..4) {
        let spec = PoolSpec::default();
        let w = init_rank_weights(x.dims().channels, 4);
        let shuffled = map_regions(&x, |v| {
            v.rotate_left(rot);
            v.swap(0, 3);
        });
        let y = opn_forward(&x, &spec, &w).unwrap().0;
        let y2 = opn_forward(&shuffled, &spec, &w).unwrap().0;
        prop_assert_eq!(y.as_slice(), y2.as_slice());
    }

    #[test]
    fn opn_gradient_mass_is_conserved(x in pool_input(), seed_w in rank_weights(3)) {
        // one gradient unit per output spreads as sum(w[j]) over its region
        let spec = PoolSpec::default();
        let c = x.dims().channels;
        let w = RankWeights::new(c, 4, seed_w.as_slice()[..c * 4].to_vec()).unwrap();
        let (y, perm) = opn_forward(&x, &spec, &w).unwrap();
        let dy = Tensor4::new_filled(y.dims(), 1.0).unwrap();
        let (dx, dw) = opn_backward(&dy, &x, &perm, &w).unwrap();
        let d = x.dims();
        for b in 0..d.batch {
            for ch in 0..c {
                let plane: f64 = (0..d.height)
                    .flat_map(|i| (0..d.width).map(move |j| (i, j)))
                    .map(|(i, j)| dx.get(b, ch, i, j).unwrap())
                    .sum();
                let regions = (d.height / 2 * d.width / 2) as f64;
                let total: f64 = w.row(ch).iter().sum();
                prop_assert!((plane - regions * total).abs() <= 1e-9 * (1.0 + plane.abs()));
            }
        }
        // dW rows sum to the sum of inputs in that channel
        for ch in 0..c {
            let xs: f64 = (0..d.batch)
                .flat_map(|b| (0..d.height).flat_map(move |i| (0..d.width).map(move |j| (b, i, j))))
                .map(|(b, i, j)| x.get(b, ch, i, j).unwrap())
                .sum();
            let dws: f64 = dw.row(ch).iter().sum();
            prop_assert!((xs - dws).abs() <= 1e-9 * (1.0 + xs.abs()));
        }
    }

    #[test]
    fn opn_dw_rows_are_sorted_descending(x in pool_input()) {
        // with dy = 1, dW[j][r] sums the rank-r values, which cannot increase with r
        let spec = PoolSpec::default();
        let w = init_rank_weights(x.dims().channels, 4);
        let (y, perm) = opn_forward(&x, &spec, &w).unwrap();
        let (_, dw) = opn_backward(&Tensor4::new_filled(y.dims(), 1.0).unwrap(), &x, &perm, &w).unwrap();
        for row in dw.rows() {
            prop_assert!(row.windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn rank_region_is_a_stable_descending_permutation(v in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5, 2.0]), 1..20)) {
        let perm = rank_region(&v).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..v.len()).collect::<Vec<_>>());
        for pair in perm.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            prop_assert!(v[a] > v[b] || (v[a] == v[b] && a < b));
        }
    }

    #[test]
    fn softmax_variant_stays_within_region_range(x in pool_input(), theta in rank_weights(3)) {
        let spec = PoolSpec::default();
        let c = x.dims().channels;
        let theta = RankWeights::new(c, 4, theta.as_slice()[..c * 4].to_vec()).unwrap();
        let (y, _, w) = opn_softmax_forward(&x, &spec, &theta).unwrap();
        for row in w.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
        let max = max_pool_forward(&x, &spec).unwrap().0;
        let min = max_pool_forward(&x.scale(-1.0), &spec).unwrap().0.scale(-1.0);
        for ((&yv, &hi), &lo) in y.as_slice().iter().zip(max.as_slice()).zip(min.as_slice()) {
            prop_assert!(yv <= hi + 1e-12 && yv >= lo - 1e-12);
        }
    }

    #[test]
    fn lbpn_with_uniform_weights_is_avg_pooling(x in pool_input()) {
        let spec = PoolSpec::default();
        let w = LocationWeights::uniform(x.dims().channels, 4).unwrap();
        let y = lbpn_forward(&x, &spec, &w).unwrap();
        prop_assert!(y.max_abs_diff(&avg_pool_forward(&x, &spec).unwrap()).unwrap() <= 1e-12);
    }
}

#[test]
fn lbpn_depends_on_position_where_opn_does_not() {
    let spec = PoolSpec::default();
    let x = Tensor4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let flipped = Tensor4::from_vec((1, 1, 2, 2), vec![4.0, 3.0, 2.0, 1.0]).unwrap();
    let loc = LocationWeights::from_row(1, &[0.4, 0.3, 0.2, 0.1]).unwrap();
    assert_relative_eq!(lbpn_forward(&x, &spec, &loc).unwrap().as_slice()[0], 2.0, epsilon = 1e-15);
    assert_relative_eq!(lbpn_forward(&flipped, &spec, &loc).unwrap().as_slice()[0], 3.0, epsilon = 1e-15);

    let rank = init_rank_weights(1, 4);
    let a = opn_forward(&x, &spec, &rank).unwrap().0;
    let b = opn_forward(&flipped, &spec, &rank).unwrap().0;
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn parameter_counts_for_every_channel_count() {
    let spec = PoolSpec::default();
    for n in 1..=256 {
        assert_eq!(pooling_param_count(PoolingKind::Opn, n, &spec), 4 * n);
        assert_eq!(pooling_param_count(PoolingKind::OpnSoftmax, n, &spec), 4 * n);
        assert_eq!(pooling_param_count(PoolingKind::Lbpn, n, &spec), 4 * n);
        assert_eq!(pooling_param_count(PoolingKind::Max, n, &spec), 0);
        assert_eq!(pooling_param_count(PoolingKind::Avg, n, &spec), 0);
        assert_eq!(init_rank_weights(n, 4).param_count(), 4 * n);
        assert_eq!(equivalent_conv_param_count(4, n), 4 * n * n + n);
    }
}

#[test]
fn overlapping_windows_rejected_by_learned_pooling() {
    let spec = PoolSpec::new(2, 2, 1).unwrap();
    let x = Tensor4::zeros((1, 1, 3, 3)).unwrap();
    assert!(opn_forward(&x, &spec, &init_rank_weights(1, 4)).is_err());
    assert!(lbpn_forward(&x, &spec, &LocationWeights::uniform(1, 4).unwrap()).is_err());
    assert!(avg_pool_forward(&x, &spec).is_ok());
}
