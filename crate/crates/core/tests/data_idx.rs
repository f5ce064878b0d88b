use std::io::Write;

use proptest::prelude::*;

use ordpool::data::{
    encode_idx_images, encode_idx_labels, load_mnist, parse_idx_images, parse_idx_labels, split_and_batch, BatchPlan,
    Dataset, IMAGES_MAGIC, LABELS_MAGIC, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use ordpool::{Error, Tensor4};

fn byte_images(n: usize, h: usize, w: usize, bytes: &[u8]) -> Tensor4 {
    let values = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor4::from_vec((n, 1, h, w), values).unwrap()
}

proptest! {
    #[test]
    fn images_round_trip_exactly(n in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let bytes: Vec<u8> = (0..n * h * w).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
        let images = byte_images(n, h, w, &bytes);
        let encoded = encode_idx_images(&images).unwrap();
        prop_assert_eq!(&encoded[16..], &bytes[..]);
        prop_assert_eq!(parse_idx_images(&encoded).unwrap(), images);
    }

    #[test]
    fn labels_round_trip_exactly(labels in prop::collection::vec(0usize..10, 1..50)) {
        let encoded = encode_idx_labels(&labels).unwrap();
        prop_assert_eq!(parse_idx_labels(&encoded).unwrap(), labels);
    }

    #[test]
    fn every_epoch_is_a_permutation(n in 1usize..200, batch in 1usize..40, seed in any::<u64>(), epoch in 0usize..5) {
        let plan = BatchPlan::new(n, batch, seed).unwrap();
        let batches = plan.epoch_batches(epoch);
        prop_assert_eq!(batches.len(), plan.batches_per_epoch());
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == batch));
    }
}

#[test]
fn pixel_scaling_example() {
    let mut bytes = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [1u32, 2, 2] {
        bytes.extend_from_slice(&d.to_be_bytes());
    }
    bytes.extend_from_slice(&[0, 128, 255, 64]);
    let x = parse_idx_images(&bytes).unwrap();
    assert_eq!(x.dims().as_array(), [1, 1, 2, 2]);
    assert_eq!(x.as_slice(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
}

#[test]
fn malformed_files_rejected() {
    let good = encode_idx_images(&byte_images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8])).unwrap();
    let mut wrong_magic = good.clone();
    wrong_magic[3] = 0x01;
    assert!(matches!(parse_idx_images(&wrong_magic), Err(Error::Format(_))));
    assert!(matches!(parse_idx_images(&good[..good.len() - 1]), Err(Error::Format(_))));
    assert!(matches!(parse_idx_images(&good[..10]), Err(Error::Format(_))));

    let labels = encode_idx_labels(&[7, 2, 1]).unwrap();
    assert_eq!(u32::from_be_bytes(labels[..4].try_into().unwrap()), LABELS_MAGIC);
    assert!(matches!(parse_idx_labels(&labels[..labels.len() - 1]), Err(Error::Format(_))));
    let mut bad_label = labels.clone();
    bad_label[9] = 10;
    assert!(matches!(parse_idx_labels(&bad_label), Err(Error::Data(_))));
    assert!(matches!(parse_idx_images(&labels), Err(Error::Format(_))));
}

#[test]
fn split_sizes_and_partition() {
    let n = 600;
    let images = Tensor4::zeros((n, 1, 1, 1)).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let split = split_and_batch(Dataset::new(images, labels.clone()).unwrap(), 100, 50, 3).unwrap();
    assert_eq!((split.train.len(), split.val.len()), (500, 100));
    assert_eq!(split.train.labels(), &labels[..500]);
    assert_eq!(split.val.labels(), &labels[500..]);
    assert_eq!(split.batches.batches_per_epoch(), 10);

    let again = Dataset::new(Tensor4::zeros((n, 1, 1, 1)).unwrap(), labels).unwrap();
    assert!(matches!(split_and_batch(again, 600, 50, 3), Err(Error::Config(_))));
}

#[test]
fn loads_plain_and_gzipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let images = encode_idx_images(&byte_images(3, 2, 2, &[9; 12])).unwrap();
    let labels = encode_idx_labels(&[1, 2, 3]).unwrap();
    std::fs::write(dir.path().join(TRAIN_IMAGES), &images).unwrap();
    std::fs::write(dir.path().join(TRAIN_LABELS), &labels).unwrap();
    for (name, bytes) in [(TEST_IMAGES, &images), (TEST_LABELS, &labels)] {
        let file = std::fs::File::create(dir.path().join(format!("{name}.gz"))).unwrap();
        let mut gz = flate2::write::GzEncoder::new(file, flate2::Compression::default());
        gz.write_all(bytes).unwrap();
        gz.finish().unwrap();
    }
    let mnist = load_mnist(dir.path()).unwrap();
    assert_eq!(mnist.train, mnist.test);
    assert_eq!(mnist.train.labels(), &[1, 2, 3]);

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_mnist(empty.path()), Err(Error::Io(_))));
}
