use std::fmt;

use crate::error::{shape_err, Error, Result};

macro_rules! channel_weights {
    ($(#[$meta:meta])* $name:ident, $index:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            channels: usize,
            k: usize,
            values: Vec<f64>,
        }

        impl $name {
            /// Builds an `channels x k` matrix from row-major values.
            pub fn new(channels: usize, k: usize, values: Vec<f64>) -> Result<Self> {
                if channels == 0 || k == 0 {
                    return shape_err(format!(
                        "{}: channels and k must be >= 1, got {channels}x{k}",
                        stringify!($name)
                    ));
                }
                if values.len() != channels * k {
                    return shape_err(format!(
                        "{}: expected {} values for {channels}x{k}, got {}",
                        stringify!($name),
                        channels * k,
                        values.len()
                    ));
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "{}: non-finite weight {v}",
                        stringify!($name)
                    )));
                }
                Ok($name { channels, k, values })
            }

            /// Every channel gets a copy of `row`.
            pub fn from_row(channels: usize, row: &[f64]) -> Result<Self> {
                let values = row
                    .iter()
                    .copied()
                    .cycle()
                    .take(channels * row.len())
                    .collect();
                Self::new(channels, row.len(), values)
            }

            pub fn zeros(channels: usize, k: usize) -> Result<Self> {
                Self::new(channels, k, vec![0.0; channels * k])
            }

            /// All weights `1/k`.
            pub fn uniform(channels: usize, k: usize) -> Result<Self> {
                Self::new(channels, k, vec![1.0 / k as f64; channels * k])
            }

            pub(crate) fn zeros_like(&self) -> Self {
                $name {
                    channels: self.channels,
                    k: self.k,
                    values: vec![0.0; self.values.len()],
                }
            }

            pub fn channels(&self) -> usize {
                self.channels
            }

            #[doc = concat!("Region size; the number of weights per channel, indexed by ", $index, ".")]
            pub fn k(&self) -> usize {
                self.k
            }

            pub fn row(&self, channel: usize) -> &[f64] {
                &self.values[channel * self.k..(channel + 1) * self.k]
            }

            pub(crate) fn row_mut(&mut self, channel: usize) -> &mut [f64] {
                &mut self.values[channel * self.k..(channel + 1) * self.k]
            }

            pub fn get(&self, channel: usize, i: usize) -> f64 {
                self.values[channel * self.k + i]
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
                self.values.chunks_exact(self.k)
            }

            /// Number of learnable values, `channels * k`.
            pub fn param_count(&self) -> usize {
                self.values.len()
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }

            pub(crate) fn check_region(&self, channels: usize, k: usize) -> Result<()> {
                if self.channels != channels || self.k != k {
                    return shape_err(format!(
                        "{} are {}x{}, input needs {channels}x{k}",
                        stringify!($name),
                        self.channels,
                        self.k
                    ));
                }
                Ok(())
            }

            #[allow(dead_code)]
            pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
                self.check_region(other.channels, other.k)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                for (j, row) in self.rows().enumerate() {
                    write!(f, "{j}:")?;
                    for v in row {
                        write!(f, " {v:.6}")?;
                    }
                    writeln!(f)?;
                }
                Ok(())
            }
        }
    };
}

channel_weights!(
    /// Ordinal pooling weights: row `j` holds one weight per sort rank for
    /// channel `j`, rank 0 being the largest activation in a region.
    RankWeights,
    "rank"
);

channel_weights!(
    /// Location-based pooling weights: row `j` holds one weight per row-major
    /// position inside the pooling region of channel `j`.
    LocationWeights,
    "region position"
);

impl RankWeights {
    /// Weight 1 on rank 0 and 0 elsewhere, which reproduces max pooling.
    pub fn max_selector(channels: usize, k: usize) -> Result<Self> {
        let mut row = vec![0.0; k];
        if let Some(first) = row.first_mut() {
            *first = 1.0;
        }
        Self::from_row(channels, &row)
    }

    /// Row-wise softmax. Used to map logits to the effective weights of the
    /// constrained variant.
    pub fn softmax_rows(&self) -> RankWeights {
        let mut out = self.clone();
        for j in 0..self.channels {
            softmax_in_place(out.row_mut(j));
        }
        out
    }

    /// Fraction of channels whose weights strictly decrease with rank.
    pub fn fraction_strictly_decreasing(&self) -> f64 {
        let hits = self.rows().filter(|row| row.windows(2).all(|p| p[0] > p[1])).count();
        hits as f64 / self.channels as f64
    }

    /// True when every channel row is bitwise equal to the first.
    pub fn rows_identical(&self) -> bool {
        let first = self.row(0);
        self.rows().all(|row| row == first)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Initial ordinal weights: for region size `k`, rank `r` gets
/// `2 (k - r) / (k (k + 1))`.
///
/// The sequence is positive, sums to one and decreases with rank, and every
/// channel starts from the same row. For `k = 4` this is `[0.4, 0.3, 0.2, 0.1]`.
pub fn init_rank_weights(channels: usize, k: usize) -> RankWeights {
    let k = k.max(1);
    let denom = (k * (k + 1)) as f64;
    let row: Vec<f64> = (0..k).map(|r| 2.0 * (k - r) as f64 / denom).collect();
    RankWeights::from_row(channels.max(1), &row).expect("init weights are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_k4() {
        let w = init_rank_weights(3, 4);
        for row in w.rows() {
            assert_eq!(row, &[0.4, 0.3, 0.2, 0.1]);
        }
    }

    #[test]
    fn init_k1_and_k2() {
        assert_eq!(init_rank_weights(1, 1).row(0), &[1.0]);
        let w = init_rank_weights(1, 2);
        assert!((w.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_is_positive_normalised_and_decreasing() {
        for k in 1..=25 {
            let w = init_rank_weights(2, k);
            let row = w.row(1);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "k={k} sum={sum}");
            assert!(row.iter().all(|&v| v > 0.0));
            assert!(row.windows(2).all(|p| p[0] > p[1]));
        }
    }

    #[test]
    fn shape_and_finiteness_checks() {
        assert!(matches!(RankWeights::new(2, 4, vec![0.0; 7]), Err(Error::Shape(_))));
        assert!(matches!(RankWeights::new(0, 4, vec![]), Err(Error::Shape(_))));
        assert!(matches!(LocationWeights::new(1, 2, vec![0.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let theta = RankWeights::new(2, 4, vec![0.0, 0.0, 0.0, 0.0, 3.0, -1.0, 0.5, 700.0]).unwrap();
        let w = theta.softmax_rows();
        assert_eq!(w.row(0), &[0.25; 4]);
        for row in w.rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn monotonicity_diagnostic() {
        let w = RankWeights::new(2, 3, vec![0.5, 0.3, 0.2, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(w.fraction_strictly_decreasing(), 0.5);
        assert!(!w.rows_identical());
        assert!(init_rank_weights(8, 4).rows_identical());
    }
}
