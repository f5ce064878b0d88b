//! Central finite-difference oracle for every backward pass in the crate.
//!
//! Each layer check builds a small random instance, reduces the layer output
//! to a scalar `L = sum(r * y)` with a fixed random projection `r` (the
//! softmax cross-entropy head is its own scalar), and compares the analytic
//! gradients produced with `dy = r` against `(L(x + h e) - L(x - h e)) / 2h`.
//!
//! Rank-dependent layers are only checked where the sort permutation cannot
//! change inside the difference stencil: inputs are redrawn until every
//! region's smallest pairwise gap exceeds `100 h`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward, relu_backward,
    relu_forward, softmax_xent_backward, softmax_xent_forward, ConvLayer, DenseLayer,
};
use crate::pooling::{
    avg_pool_backward, avg_pool_forward, lbpn_backward, lbpn_forward, max_pool_backward, max_pool_forward,
    opn_backward, opn_forward, opn_softmax_backward, opn_softmax_forward, LocationWeights, PoolSpec, RankWeights,
    RegionGrid,
};
use crate::tensor::{Dims, Tensor4};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;
/// Required gap between any two activations of a region, in units of the step.
pub const TIE_MARGIN: f64 = 100.0;

/// Central differences of a scalar function of a tensor.
pub fn numeric_grad(mut f: impl FnMut(&Tensor4) -> f64, x: &Tensor4, h: f64) -> Result<Tensor4> {
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros_unchecked(x.dims());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite near element {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// [`numeric_grad`] over a flat parameter vector.
pub fn numeric_grad_vec(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let t = Tensor4::from_vec((1, 1, 1, x.len()), x.to_vec())?;
    Ok(numeric_grad(|p| f(p.as_slice()), &t, h)?.into_vec())
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Layers covered by the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Dense,
    Relu,
    Dropout,
    SoftmaxXent,
    AvgPool,
    MaxPool,
    Lbpn,
    Opn,
    OpnSoftmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 10] = [
        LayerKind::Conv,
        LayerKind::Dense,
        LayerKind::Relu,
        LayerKind::Dropout,
        LayerKind::SoftmaxXent,
        LayerKind::AvgPool,
        LayerKind::MaxPool,
        LayerKind::Lbpn,
        LayerKind::Opn,
        LayerKind::OpnSoftmax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Dropout => "dropout",
            LayerKind::SoftmaxXent => "softmax_xent",
            LayerKind::AvgPool => "avg",
            LayerKind::MaxPool => "max",
            LayerKind::Lbpn => "lbpn",
            LayerKind::Opn => "opn",
            LayerKind::OpnSoftmax => "opn_softmax",
        }
    }

    fn rank_dependent(&self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::Opn | LayerKind::OpnSoftmax)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "avg_pool" => Some(LayerKind::AvgPool),
                "max_pool" => Some(LayerKind::MaxPool),
                "xent" | "softmax" => Some(LayerKind::SoftmaxXent),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown layer kind {s:?}")))
    }
}

/// Worst disagreement seen for one gradient block across all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub block: &'static str,
    pub max_rel_error: f64,
    pub trial: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Result of checking one layer kind.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub layer: LayerKind,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockError>,
    /// Inputs redrawn because they violated the tie-free or nonzero margin.
    pub resampled: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {:>3} trials  h={:.0e}  tol={:.0e}  max rel err {:.3e}  {}",
            self.layer.name(),
            self.trials,
            self.step,
            self.tolerance,
            self.max_rel_error(),
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for b in &self.blocks {
            write!(
                f,
                "\n    {:<7} {:.3e} (trial {}, index {}: analytic {:.9e}, numeric {:.9e})",
                b.block, b.max_rel_error, b.trial, b.index, b.analytic, b.numeric
            )?;
        }
        Ok(())
    }
}

/// Knobs for [`check_layer_with`].
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Flip the sign of every analytic gradient. Exists to prove the oracle
    /// notices a broken backward pass.
    pub corrupt_backward: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            trials: DEFAULT_TRIALS,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0x5eed,
            corrupt_backward: false,
        }
    }
}

/// Checks `kind` on `trials` random instances; fails with
/// [`Error::GradCheck`] carrying the full report when the tolerance is exceeded.
pub fn check_layer(kind: LayerKind, trials: usize, h: f64, tolerance: f64) -> Result<GradReport> {
    check_layer_with(kind, &CheckOptions { trials, step: h, tolerance, ..CheckOptions::default() })
}

pub fn check_layer_with(kind: LayerKind, opts: &CheckOptions) -> Result<GradReport> {
    if opts.trials == 0 {
        return Err(Error::Config("gradient check needs at least one trial".into()));
    }
    if opts.step.is_nan() || opts.step <= 0.0 {
        return Err(Error::Config(format!("step must be positive, got {}", opts.step)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((kind as u64 + 1) << 32));
    let mut report = GradReport {
        layer: kind,
        trials: opts.trials,
        step: opts.step,
        tolerance: opts.tolerance,
        blocks: Vec::new(),
        resampled: 0,
    };
    for trial in 0..opts.trials {
        let (blocks, resampled) = run_trial(kind, opts.step, &mut rng)?;
        report.resampled += resampled;
        for mut block in blocks {
            if opts.corrupt_backward {
                block.analytic.iter_mut().for_each(|v| *v = -*v);
            }
            merge(&mut report.blocks, &block, trial);
        }
    }
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::GradCheck(Box::new(report)))
    }
}

struct Block {
    name: &'static str,
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

fn merge(into: &mut Vec<BlockError>, block: &Block, trial: usize) {
    let (index, err) = block
        .analytic
        .iter()
        .zip(&block.numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    let entry = BlockError {
        block: block.name,
        max_rel_error: err,
        trial,
        index,
        analytic: block.analytic[index],
        numeric: block.numeric[index],
    };
    match into.iter_mut().find(|b| b.block == block.name) {
        Some(existing) if existing.max_rel_error >= err => {}
        Some(existing) => *existing = entry,
        None => into.push(entry),
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4 {
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(dims, data).expect("valid dims")
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Smallest pairwise gap between activations sharing a region.
pub fn min_region_gap(x: &Tensor4, spec: &PoolSpec) -> Result<f64> {
    let grid = RegionGrid::new(spec, x.dims())?;
    let src = x.as_slice();
    let mut gap = f64::INFINITY;
    let mut vals = vec![0.0; grid.k()];
    grid.for_each(|_, _, base| {
        for (v, &off) in vals.iter_mut().zip(&grid.offsets) {
            *v = src[base + off];
        }
        vals.sort_by(f64::total_cmp);
        for pair in vals.windows(2) {
            gap = gap.min(pair[1] - pair[0]);
        }
    });
    Ok(gap)
}

fn projected(y: &Tensor4, r: &Tensor4) -> f64 {
    y.dot(r).expect("projection dims match")
}

fn run_trial(kind: LayerKind, h: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<Block>, usize)> {
    let spec = PoolSpec::default();
    let pool_in = Dims::new(2, 3, 4, 4);
    let pool_out = spec.output_dims(pool_in)?;

    // input draw with the margin rules
    let mut resampled = 0;
    let x = loop {
        let dims = match kind {
            LayerKind::Conv => Dims::new(2, 2, 4, 4),
            LayerKind::Dense => Dims::new(2, 3, 2, 2),
            LayerKind::SoftmaxXent => Dims::new(2, 4, 1, 1),
            _ => pool_in,
        };
        let x = uniform(rng, dims);
        let ok = if kind.rank_dependent() {
            min_region_gap(&x, &spec)? > TIE_MARGIN * h
        } else if kind == LayerKind::Relu {
            x.as_slice().iter().all(|v| v.abs() > TIE_MARGIN * h)
        } else {
            true
        };
        if ok {
            break x;
        }
        resampled += 1;
        if resampled > 10_000 {
            return Err(Error::Numeric("could not draw a tie-free input".into()));
        }
    };

    let block = |name, analytic: Vec<f64>, numeric: Vec<f64>| Block { name, analytic, numeric };

    let blocks = match kind {
        LayerKind::AvgPool => {
            let r = uniform(rng, pool_out);
            let dx = avg_pool_backward(&r, &spec, x.dims())?;
            let n = numeric_grad(|p| projected(&avg_pool_forward(p, &spec).unwrap(), &r), &x, h)?;
            vec![block("dx", dx.into_vec(), n.into_vec())]
        }
        LayerKind::MaxPool => {
            let r = uniform(rng, pool_out);
            let (_, cache) = max_pool_forward(&x, &spec)?;
            let dx = max_pool_backward(&r, &cache, x.dims())?;
            let n = numeric_grad(|p| projected(&max_pool_forward(p, &spec).unwrap().0, &r), &x, h)?;
            vec![block("dx", dx.into_vec(), n.into_vec())]
        }
        LayerKind::Lbpn => {
            let w = LocationWeights::new(3, 4, uniform_vec(rng, 12))?;
            let r = uniform(rng, pool_out);
            let (dx, dw) = lbpn_backward(&r, &x, &spec, &w)?;
            let nx = numeric_grad(|p| projected(&lbpn_forward(p, &spec, &w).unwrap(), &r), &x, h)?;
            let nw = numeric_grad_vec(
                |p| {
                    let w = LocationWeights::new(3, 4, p.to_vec()).unwrap();
                    projected(&lbpn_forward(&x, &spec, &w).unwrap(), &r)
                },
                w.as_slice(),
                h,
            )?;
            vec![block("dx", dx.into_vec(), nx.into_vec()), block("dW", dw.as_slice().to_vec(), nw)]
        }
        LayerKind::Opn => {
            let w = RankWeights::new(3, 4, uniform_vec(rng, 12))?;
            let r = uniform(rng, pool_out);
            let (_, perms) = opn_forward(&x, &spec, &w)?;
            let (dx, dw) = opn_backward(&r, &x, &perms, &w)?;
            let nx = numeric_grad(|p| projected(&opn_forward(p, &spec, &w).unwrap().0, &r), &x, h)?;
            let nw = numeric_grad_vec(
                |p| {
                    let w = RankWeights::new(3, 4, p.to_vec()).unwrap();
                    projected(&opn_forward(&x, &spec, &w).unwrap().0, &r)
                },
                w.as_slice(),
                h,
            )?;
            vec![block("dx", dx.into_vec(), nx.into_vec()), block("dW", dw.as_slice().to_vec(), nw)]
        }
        LayerKind::OpnSoftmax => {
            let theta = RankWeights::new(3, 4, uniform_vec(rng, 12))?;
            let r = uniform(rng, pool_out);
            let (_, perms, w_eff) = opn_softmax_forward(&x, &spec, &theta)?;
            let (dx, dtheta) = opn_softmax_backward(&r, &x, &perms, &theta, &w_eff)?;
            let nx = numeric_grad(|p| projected(&opn_softmax_forward(p, &spec, &theta).unwrap().0, &r), &x, h)?;
            let nt = numeric_grad_vec(
                |p| {
                    let t = RankWeights::new(3, 4, p.to_vec()).unwrap();
                    projected(&opn_softmax_forward(&x, &spec, &t).unwrap().0, &r)
                },
                theta.as_slice(),
                h,
            )?;
            vec![block("dx", dx.into_vec(), nx.into_vec()), block("dTheta", dtheta.as_slice().to_vec(), nt)]
        }
        LayerKind::Relu => {
            let r = uniform(rng, x.dims());
            let (_, mask) = relu_forward(&x);
            let dx = relu_backward(&r, &mask)?;
            let n = numeric_grad(|p| projected(&relu_forward(p).0, &r), &x, h)?;
            vec![block("dx", dx.into_vec(), n.into_vec())]
        }
        LayerKind::Dropout => {
            let seed = rng.random();
            let keep = 0.8;
            let r = uniform(rng, x.dims());
            let (_, state) = dropout_forward(&x, keep, seed)?;
            let dx = dropout_backward(&r, &state)?;
            let n = numeric_grad(|p| projected(&dropout_forward(p, keep, seed).unwrap().0, &r), &x, h)?;
            vec![block("dx", dx.into_vec(), n.into_vec())]
        }
        LayerKind::SoftmaxXent => {
            let classes = x.dims().channels;
            let labels: Vec<usize> = (0..x.dims().batch).map(|_| rng.random_range(0..classes)).collect();
            let (_, probs) = softmax_xent_forward(&x, &labels)?;
            let d = softmax_xent_backward(&probs, &labels)?;
            let n = numeric_grad(|p| softmax_xent_forward(p, &labels).unwrap().0, &x, h)?;
            vec![block("dLogits", d.into_vec(), n.into_vec())]
        }
        LayerKind::Conv => {
            let (fh, fw) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let layer = ConvLayer::new(2, 3, fh, fw, uniform_vec(rng, 6 * fh * fw), uniform_vec(rng, 3))?;
            let r = uniform(rng, Dims::new(2, 3, 4, 4));
            let g = conv2d_backward(&r, &x, &layer)?;
            let nx = numeric_grad(|p| projected(&conv2d_forward(p, &layer).unwrap(), &r), &x, h)?;
            let nw = numeric_grad_vec(
                |p| {
                    let l = ConvLayer { weights: p.to_vec(), ..layer.clone() };
                    projected(&conv2d_forward(&x, &l).unwrap(), &r)
                },
                &layer.weights,
                h,
            )?;
            let nb = numeric_grad_vec(
                |p| {
                    let l = ConvLayer { bias: p.to_vec(), ..layer.clone() };
                    projected(&conv2d_forward(&x, &l).unwrap(), &r)
                },
                &layer.bias,
                h,
            )?;
            vec![block("dx", g.dx.into_vec(), nx.into_vec()), block("dW", g.d_weights, nw), block("dB", g.d_bias, nb)]
        }
        LayerKind::Dense => {
            let layer = DenseLayer::new(12, 5, uniform_vec(rng, 60), uniform_vec(rng, 5))?;
            let r = uniform(rng, Dims::new(2, 5, 1, 1));
            let g = dense_backward(&r, &x, &layer)?;
            let nx = numeric_grad(|p| projected(&dense_forward(p, &layer).unwrap(), &r), &x, h)?;
            let nw = numeric_grad_vec(
                |p| {
                    let l = DenseLayer { weights: p.to_vec(), ..layer.clone() };
                    projected(&dense_forward(&x, &l).unwrap(), &r)
                },
                &layer.weights,
                h,
            )?;
            let nb = numeric_grad_vec(
                |p| {
                    let l = DenseLayer { bias: p.to_vec(), ..layer.clone() };
                    projected(&dense_forward(&x, &l).unwrap(), &r)
                },
                &layer.bias,
                h,
            )?;
            vec![block("dx", g.dx.into_vec(), nx.into_vec()), block("dW", g.d_weights, nw), block("dB", g.d_bias, nb)]
        }
    };
    Ok((blocks, resampled))
}
