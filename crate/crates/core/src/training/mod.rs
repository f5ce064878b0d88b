//! The two-stage convolutional classifier, plain SGD with a decaying
//! dropout keep probability, and per-epoch metrics.

mod compare;
mod experiment;
mod network;

pub use compare::{compare_schemes, Comparison, RunOutcome, SchemeSummary};
pub use experiment::{
    evaluate, run_experiment, train_network, train_step, EpochRecord, ExperimentData, RunMetrics, BASELINE_LOSS_SAMPLE,
};
pub use network::{LayerWeights, Network, PoolLayer};

use crate::error::{Error, Result};
use crate::pooling::PoolingKind;

/// Output channels and square filter size of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels: usize,
    pub filter: usize,
}

/// Architecture of the classifier:
/// conv1 -> ReLU -> pool -> conv2 -> ReLU -> pool -> dense -> ReLU -> dropout -> dense.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub pooling: PoolingKind,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Side length of the square single-channel input.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            pooling: PoolingKind::Opn,
            conv1: ConvSpec { channels: 32, filter: 5 },
            conv2: ConvSpec { channels: 64, filter: 5 },
            hidden_dim: 1024,
            num_classes: 10,
            image_size: 28,
            seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn with_pooling(&self, pooling: PoolingKind) -> Self {
        NetworkConfig { pooling, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NetworkConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.conv1.channels,
            self.conv1.filter,
            self.conv2.channels,
            self.conv2.filter,
            self.hidden_dim,
            self.num_classes,
            self.image_size,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!("network sizes must be >= 1: {self:?}")));
        }
        if self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {} does not tile two 2x2/2 pooling stages",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Flattened length after the second pooling stage.
    pub fn flat_dim(&self) -> usize {
        let side = self.image_size / 4;
        self.conv2.channels * side * side
    }
}

/// SGD and dropout-schedule settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Keep probability at the first batch.
    pub dropout_base: f64,
    /// Exponential decay applied once per `dropout_interval` batches.
    pub dropout_rate: f64,
    pub dropout_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 50,
            learning_rate: 0.05,
            dropout_base: 0.98,
            dropout_rate: 0.003,
            dropout_interval: 1000,
        }
    }
}

/// Lower bound on the scheduled keep probability.
pub const MIN_KEEP_PROB: f64 = 0.5;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.dropout_interval == 0 {
            return Err(Error::Config("batch size and dropout interval must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.dropout_base > 0.0 && self.dropout_base <= 1.0) {
            return Err(Error::Config(format!("dropout base must lie in (0, 1], got {}", self.dropout_base)));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate.is_finite()) {
            return Err(Error::Config(format!("bad dropout decay rate {}", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Keep probability for the `global_batch`-th training batch (0-based,
/// counted across epochs): `base * exp(-rate * floor(index / interval))`,
/// never below [`MIN_KEEP_PROB`].
pub fn dropout_keep_prob(global_batch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (global_batch / cfg.dropout_interval.max(1)) as f64;
    (cfg.dropout_base * (-cfg.dropout_rate * steps).exp()).max(MIN_KEEP_PROB)
}
