//! Needs the MNIST files in `OPN_DATA_DIR` or `data/` at the workspace root.

use std::path::PathBuf;

use ordpool::data::load_mnist;
use ordpool::pooling::PoolingKind;
use ordpool::training::{run_experiment, ExperimentData, NetworkConfig, TrainConfig};

fn data_dir() -> PathBuf {
    std::env::var_os("OPN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

#[test]
fn one_epoch_on_a_thousand_examples_beats_half() {
    let mnist = load_mnist(&data_dir()).expect("MNIST files missing; see README");
    assert_eq!((mnist.train.len(), mnist.test.len()), (60_000, 10_000));
    let data = ExperimentData::from_mnist(mnist, 10_000, Some(1000)).unwrap();
    assert_eq!((data.train.len(), data.val.len()), (1000, 10_000));
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let metrics = run_experiment(&NetworkConfig::default().with_pooling(PoolingKind::Opn), &cfg, &data).unwrap();
    let last = metrics.last().unwrap();
    assert_eq!(metrics.records.len(), 2);
    assert!(last.val_acc > 0.5, "validation accuracy {}", last.val_acc);
}
