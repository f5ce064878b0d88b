//! CSV files for metrics, pooling weights and scheme comparisons.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back bit-for-bit.

use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pooling::PoolingKind;
use crate::training::{Comparison, EpochRecord, LayerWeights, RunMetrics};

pub const METRICS_HEADER: [&str; 5] = ["epoch", "train_loss", "val_acc", "test_acc", "wall_seconds"];
pub const WEIGHTS_HEADER: [&str; 4] = ["layer", "channel", "rank", "weight"];
pub const COMPARE_HEADER: [&str; 4] = ["scheme", "seed", "min_val_err", "test_err"];

/// One row of a weights file. `rank` is the rank for ordinal weights and the
/// region position for location weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub layer: String,
    pub channel: usize,
    pub rank: usize,
    pub weight: f64,
}

/// One row of a compare file; `seed` is a number or `mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub scheme: String,
    pub seed: String,
    pub min_val_err: f64,
    pub test_err: f64,
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let got = rdr.headers()?;
    if got.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header {}, got {}",
            expected.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Format(format!("missing column {i} in {rec:?}")))?;
    raw.parse().map_err(|_| Error::Format(format!("cannot parse {raw:?} in column {i}")))
}

pub fn write_metrics(out: impl Write, metrics: &RunMetrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in &metrics.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_acc.to_string(),
            r.test_acc.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(input: impl Read) -> Result<RunMetrics> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &METRICS_HEADER)?;
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        records.push(EpochRecord {
            epoch: field(&rec, 0)?,
            train_loss: field(&rec, 1)?,
            val_acc: field(&rec, 2)?,
            test_acc: field(&rec, 3)?,
            wall_seconds: field(&rec, 4)?,
        });
    }
    Ok(RunMetrics { records })
}

/// Flattens named layer weights into rows, channel-major.
pub fn weight_rows(layers: &[(&str, LayerWeights)]) -> Vec<WeightRow> {
    let mut rows = Vec::new();
    for (name, w) in layers {
        let k = w.k();
        for (i, &weight) in w.as_slice().iter().enumerate() {
            rows.push(WeightRow { layer: name.to_string(), channel: i / k, rank: i % k, weight });
        }
    }
    rows
}

pub fn write_weights(out: impl Write, rows: &[WeightRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEIGHTS_HEADER)?;
    for r in rows {
        w.write_record([r.layer.clone(), r.channel.to_string(), r.rank.to_string(), r.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(input: impl Read) -> Result<Vec<WeightRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &WEIGHTS_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(WeightRow {
                layer: field(&rec, 0)?,
                channel: field(&rec, 1)?,
                rank: field(&rec, 2)?,
                weight: field(&rec, 3)?,
            })
        })
        .collect()
}

/// One row per scheme with `seed = mean`, holding seed-averaged errors.
pub fn compare_summary_rows(cmp: &Comparison) -> Vec<CompareRow> {
    cmp.summaries
        .iter()
        .map(|s| CompareRow {
            scheme: s.scheme.name().to_string(),
            seed: "mean".to_string(),
            min_val_err: s.mean_min_val_err,
            test_err: s.mean_test_err,
        })
        .collect()
}

/// One row per individual run.
pub fn compare_run_rows(cmp: &Comparison) -> Vec<CompareRow> {
    cmp.runs
        .iter()
        .map(|r| CompareRow {
            scheme: r.scheme.name().to_string(),
            seed: r.seed.to_string(),
            min_val_err: r.min_val_err(),
            test_err: r.test_err(),
        })
        .collect()
}

pub fn write_compare(out: impl Write, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_HEADER)?;
    for r in rows {
        w.write_record([r.scheme.clone(), r.seed.clone(), r.min_val_err.to_string(), r.test_err.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_compare(input: impl Read) -> Result<Vec<CompareRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &COMPARE_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let scheme: String = field(&rec, 0)?;
            scheme.parse::<PoolingKind>()?;
            Ok(CompareRow { scheme, seed: field(&rec, 1)?, min_val_err: field(&rec, 2)?, test_err: field(&rec, 3)? })
        })
        .collect()
}
