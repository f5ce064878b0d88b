use super::experiment::{train_network, ExperimentData, RunMetrics};
use super::network::{LayerWeights, Network};
use super::{NetworkConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::pooling::PoolingKind;

/// Result of training one scheme with one seed.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub scheme: PoolingKind,
    pub seed: u64,
    pub metrics: RunMetrics,
    /// Effective pooling weights after training (empty for max/avg).
    pub pool_weights: Vec<(&'static str, LayerWeights)>,
}

impl RunOutcome {
    pub fn min_val_err(&self) -> f64 {
        self.metrics.min_val_error()
    }

    pub fn test_err(&self) -> f64 {
        self.metrics.final_test_error()
    }
}

/// Errors of one scheme aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSummary {
    pub scheme: PoolingKind,
    pub runs: usize,
    pub mean_min_val_err: f64,
    pub best_min_val_err: f64,
    pub mean_test_err: f64,
    pub best_test_err: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<RunOutcome>,
    pub summaries: Vec<SchemeSummary>,
}

impl Comparison {
    pub fn summary(&self, scheme: PoolingKind) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme)
    }

    /// Mean test accuracy of OPN minus that of max pooling, when both ran.
    pub fn opn_minus_max(&self) -> Option<f64> {
        let opn = self.summary(PoolingKind::Opn)?;
        let max = self.summary(PoolingKind::Max)?;
        Some(max.mean_test_err - opn.mean_test_err)
    }

    /// Fraction of channels, over every trained OPN layer, whose rank
    /// weights strictly decrease with rank.
    pub fn monotone_fraction(&self) -> Option<f64> {
        let mut channels = 0usize;
        let mut monotone = 0.0;
        for run in self.runs.iter().filter(|r| r.scheme == PoolingKind::Opn) {
            for (_, w) in &run.pool_weights {
                if let LayerWeights::Rank(w) = w {
                    monotone += w.fraction_strictly_decreasing() * w.channels() as f64;
                    channels += w.channels();
                }
            }
        }
        (channels > 0).then(|| monotone / channels as f64)
    }
}

fn summarize(scheme: PoolingKind, runs: &[&RunOutcome]) -> SchemeSummary {
    let n = runs.len() as f64;
    let val: Vec<f64> = runs.iter().map(|r| r.min_val_err()).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.test_err()).collect();
    SchemeSummary {
        scheme,
        runs: runs.len(),
        mean_min_val_err: val.iter().sum::<f64>() / n,
        best_min_val_err: val.iter().copied().fold(f64::INFINITY, f64::min),
        mean_test_err: test.iter().sum::<f64>() / n,
        best_test_err: test.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Trains every scheme with every seed, sequentially, under one
/// configuration. The seed replaces `net_cfg.seed` for each run.
pub fn compare_schemes(
    schemes: &[PoolingKind],
    seeds: &[u64],
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    data: &ExperimentData,
) -> Result<Comparison> {
    if schemes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("compare needs at least one scheme and one seed".into()));
    }
    let mut runs = Vec::with_capacity(schemes.len() * seeds.len());
    for &scheme in schemes {
        for &seed in seeds {
            let mut net = Network::new(&net_cfg.with_pooling(scheme).with_seed(seed))?;
            let metrics = train_network(&mut net, cfg, data)?;
            runs.push(RunOutcome { scheme, seed, metrics, pool_weights: net.pool_weights() });
        }
    }
    let summaries = schemes
        .iter()
        .map(|&s| {
            let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.scheme == s).collect();
            summarize(s, &mine)
        })
        .collect();
    Ok(Comparison { runs, summaries })
}
