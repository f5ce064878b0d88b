use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Dims, Tensor4};

/// The keep mask drawn by one [`dropout_forward`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutState {
    pub keep_prob: f64,
    pub seed: u64,
    dims: Dims,
    mask: Vec<bool>,
}

impl DropoutState {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Fraction of kept elements.
    pub fn kept_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Config(format!("keep probability must lie in (0, 1], got {keep_prob}")));
    }
    Ok(())
}

/// Inverted dropout: each element is kept with probability `keep_prob` and
/// scaled by `1 / keep_prob`. The mask is a pure function of `seed`.
pub fn dropout_forward(x: &Tensor4, keep_prob: f64, seed: u64) -> Result<(Tensor4, DropoutState)> {
    check_keep_prob(keep_prob)?;
    let mask: Vec<bool> = if keep_prob == 1.0 {
        vec![true; x.len()]
    } else {
        let coin = Bernoulli::new(keep_prob).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..x.len()).map(|_| coin.sample(&mut rng)).collect()
    };
    let y = apply(x, &mask, keep_prob);
    Ok((y, DropoutState { keep_prob, seed, dims: x.dims(), mask }))
}

pub fn dropout_backward(dy: &Tensor4, state: &DropoutState) -> Result<Tensor4> {
    if dy.dims() != state.dims {
        return shape_err(format!("dropout_backward: dy {} vs mask {}", dy.dims(), state.dims));
    }
    Ok(apply(dy, &state.mask, state.keep_prob))
}

fn apply(t: &Tensor4, mask: &[bool], keep_prob: f64) -> Tensor4 {
    if keep_prob == 1.0 {
        return t.clone();
    }
    let scale = 1.0 / keep_prob;
    let data = t.as_slice().iter().zip(mask).map(|(&v, &keep)| if keep { v * scale } else { 0.0 }).collect();
    Tensor4::from_vec(t.dims(), data).expect("same dims")
}
