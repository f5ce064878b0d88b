use std::time::Instant;

use super::network::Network;
use super::{dropout_keep_prob, NetworkConfig, TrainConfig};
use crate::data::{BatchPlan, Dataset, Mnist};
use crate::error::{Error, Result};
use crate::layers::softmax_xent_forward;

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 200;

/// Leading training examples used for the epoch-0 loss estimate.
pub const BASELINE_LOSS_SAMPLE: usize = 10_000;

/// Metrics recorded after one epoch; epoch 0 is the untrained network.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss: over batches for trained epochs, over the first
    /// [`BASELINE_LOSS_SAMPLE`] training examples (dropout off) for epoch 0.
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

/// Per-epoch history of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    /// Lowest validation error over all recorded epochs (including epoch 0).
    pub fn min_val_error(&self) -> f64 {
        self.records.iter().map(|r| 1.0 - r.val_acc).fold(f64::INFINITY, f64::min)
    }

    /// Test error after the last recorded epoch.
    pub fn final_test_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| 1.0 - r.test_acc)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Equality ignoring wall-clock times.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_acc.to_bits() == b.val_acc.to_bits()
                    && a.test_acc.to_bits() == b.test_acc.to_bits()
            })
    }
}

/// Training, validation and test sets for one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    /// Holds out the last `val_size` training images for validation, then
    /// optionally keeps only the first `subset` of the remaining ones.
    pub fn from_mnist(mnist: Mnist, val_size: usize, subset: Option<usize>) -> Result<Self> {
        let (train, val) = mnist.train.split_tail(val_size)?;
        let train = match subset {
            Some(0) => return Err(Error::Config("subset must be >= 1".into())),
            Some(k) if k < train.len() => train.head(k)?,
            _ => train,
        };
        Ok(ExperimentData { train, val, test: mnist.test })
    }
}

/// One SGD step on `batch`; returns the batch loss measured before the update.
pub fn train_step(net: &mut Network, batch: &Dataset, lr: f64, keep_prob: f64, seed: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let (loss, grads) = net.loss_and_grads(batch.images(), batch.labels(), keep_prob, seed)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { batch: 0, loss });
    }
    net.apply_sgd(&grads, lr);
    Ok(loss)
}

/// Returns `(mean loss, accuracy)` with dropout off.
fn eval_pass(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let part = data.select(chunk)?;
        let logits = net.predict(part.images())?;
        let (loss, _) = softmax_xent_forward(&logits, part.labels())?;
        loss_sum += loss * chunk.len() as f64;
        for (b, &label) in part.labels().iter().enumerate() {
            let scores = logits.item(b);
            // first maximum wins, so ties go to the smallest class
            let best = scores.iter().enumerate().fold(0, |best, (i, &v)| if v > scores[best] { i } else { best });
            correct += usize::from(best == label);
        }
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Fraction of examples whose arg-max logit matches the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    eval_pass(net, data).map(|(_, acc)| acc)
}

fn dropout_seed(seed: u64, global_batch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ global_batch as u64
}

/// Trains `net` in place and records metrics after every epoch. Batch order
/// and dropout masks derive from the network seed.
pub fn train_network(net: &mut Network, cfg: &TrainConfig, data: &ExperimentData) -> Result<RunMetrics> {
    cfg.validate()?;
    let seed = net.config().seed;
    let plan = BatchPlan::new(data.train.len(), cfg.batch_size, seed)?;
    let start = Instant::now();
    let mut metrics = RunMetrics::default();

    let (train_loss, _) = eval_pass(net, &data.train.head(BASELINE_LOSS_SAMPLE)?)?;
    let record = EpochRecord {
        epoch: 0,
        train_loss,
        val_acc: evaluate(net, &data.val)?,
        test_acc: evaluate(net, &data.test)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    log_epoch(net, &record);
    metrics.records.push(record);

    let mut global = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = plan.epoch_batches(epoch - 1);
        for indices in &batches {
            let batch = data.train.select(indices)?;
            let keep = dropout_keep_prob(global, cfg);
            let loss =
                train_step(net, &batch, cfg.learning_rate, keep, dropout_seed(seed, global)).map_err(|e| match e {
                    Error::Divergence { loss, .. } => Error::Divergence { batch: global, loss },
                    other => other,
                })?;
            loss_sum += loss;
            global += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_acc: evaluate(net, &data.val)?,
            test_acc: evaluate(net, &data.test)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log_epoch(net, &record);
        metrics.records.push(record);
    }
    Ok(metrics)
}

fn log_epoch(net: &Network, r: &EpochRecord) {
    log::info!(
        "{} seed {} epoch {}: loss {:.4} val {:.4} test {:.4} ({:.1}s)",
        net.config().pooling,
        net.config().seed,
        r.epoch,
        r.train_loss,
        r.val_acc,
        r.test_acc,
        r.wall_seconds
    );
}

/// Builds a fresh network from `net_cfg` and trains it.
pub fn run_experiment(net_cfg: &NetworkConfig, cfg: &TrainConfig, data: &ExperimentData) -> Result<RunMetrics> {
    let mut net = Network::new(net_cfg)?;
    train_network(&mut net, cfg, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::PoolingKind;
    use crate::tensor::Tensor4;
    use crate::training::ConvSpec;

    fn tiny_net(pooling: PoolingKind) -> NetworkConfig {
        NetworkConfig {
            pooling,
            conv1: ConvSpec { channels: 2, filter: 3 },
            conv2: ConvSpec { channels: 3, filter: 3 },
            hidden_dim: 6,
            num_classes: 10,
            image_size: 4,
            seed: 9,
        }
    }

    fn toy_data(n: usize) -> Dataset {
        let values = (0..n * 16).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let images = Tensor4::from_vec((n, 1, 4, 4), values).unwrap();
        Dataset::new(images, (0..n).map(|i| i % 10).collect()).unwrap()
    }

    #[test]
    fn zero_epochs_records_baseline_only() {
        let data = ExperimentData { train: toy_data(6), val: toy_data(3), test: toy_data(3) };
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let m = run_experiment(&tiny_net(PoolingKind::Opn), &cfg, &data).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].epoch, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let data = ExperimentData { train: toy_data(4), val: toy_data(2), test: toy_data(2) };
        let cfg = TrainConfig { epochs: 3, batch_size: 2, learning_rate: 1e308, ..TrainConfig::default() };
        let err = run_experiment(&tiny_net(PoolingKind::Max), &cfg, &data).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn metric_summaries() {
        let rec =
            |epoch, val_acc, test_acc| EpochRecord { epoch, train_loss: 1.0, val_acc, test_acc, wall_seconds: 0.0 };
        let m = RunMetrics { records: vec![rec(0, 0.1, 0.1), rec(1, 0.9, 0.8), rec(2, 0.85, 0.9)] };
        assert!((m.min_val_error() - 0.1).abs() < 1e-15);
        assert!((m.final_test_error() - 0.1).abs() < 1e-15);
    }
}
