//! Weights files and datasets: round trips, corruption, byte determinism.

use nsb_core::classifier::{self, ClassifierError, TrainConfig};
use nsb_core::dataset::{build_dataset, generate_samples, DatasetConfig, DatasetManifest, MANIFEST_FILE};
use nsb_core::evaluate::network_input;
use nsb_core::localizer::detector::{self, DetectorError, DetectorTrainConfig};
use nsb_core::localizer::map_box_to_network;
use nsb_core::weights::WeightsError;
use nsb_core::{ClassifierWeights, Tensor3};
use nsb_core::localizer::DetectorWeights;

#[test]
fn classifier_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = ClassifierWeights::init(classifier::INPUT_SIZE, 77).unwrap();
    let path = dir.path().join("c.nsb");
    w.save(&path).unwrap();
    assert_eq!(ClassifierWeights::load(&path).unwrap(), w);
}

#[test]
fn detector_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = DetectorWeights::init(detector::INPUT_SIZE, 78).unwrap();
    let path = dir.path().join("d.nsb");
    w.save(&path).unwrap();
    assert_eq!(DetectorWeights::load(&path).unwrap(), w);
}

#[test]
fn corrupted_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cpath = dir.path().join("c.nsb");
    let dpath = dir.path().join("d.nsb");
    ClassifierWeights::init(classifier::INPUT_SIZE, 1).unwrap().save(&cpath).unwrap();
    DetectorWeights::init(detector::INPUT_SIZE, 1).unwrap().save(&dpath).unwrap();
    let bytes = std::fs::read(&cpath).unwrap();

    let bad = dir.path().join("bad.nsb");
    std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(ClassifierWeights::load(&bad), Err(ClassifierError::Weights(WeightsError::Truncated(_)))));

    let mut wrong_magic = bytes.clone();
    wrong_magic[3] = b'9';
    std::fs::write(&bad, &wrong_magic).unwrap();
    assert!(matches!(ClassifierWeights::load(&bad), Err(ClassifierError::Weights(WeightsError::Version(_)))));

    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    std::fs::write(&bad, &nan).unwrap();
    assert!(matches!(ClassifierWeights::load(&bad), Err(ClassifierError::Weights(WeightsError::NonFinite(_)))));

    let mut trailing = bytes;
    trailing.push(0);
    std::fs::write(&bad, &trailing).unwrap();
    assert!(ClassifierWeights::load(&bad).is_err());

    // Each network refuses the other's file.
    assert!(ClassifierWeights::load(&dpath).is_err());
    assert!(matches!(DetectorWeights::load(&cpath), Err(DetectorError::Weights(_))));
    assert!(ClassifierWeights::load(dir.path().join("missing.nsb")).is_err());
}

#[test]
fn datasets_are_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig::default();
    let ma = build_dataset(3, 99, a.path(), &cfg).unwrap();
    build_dataset(3, 99, b.path(), &cfg).unwrap();
    for e in &ma.entries {
        for rel in [&e.image_path, &e.mask_path] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }
    assert_eq!(std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(), std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    let reloaded = DatasetManifest::load(a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded.load_samples().unwrap(), generate_samples(3, 99, &cfg).unwrap());

    let c = tempfile::tempdir().unwrap();
    build_dataset(3, 100, c.path(), &cfg).unwrap();
    let first = &ma.entries[0].image_path;
    assert_ne!(std::fs::read(a.path().join(first)).unwrap(), std::fs::read(c.path().join(first)).unwrap());
}

#[test]
fn training_is_byte_deterministic() {
    let samples = generate_samples(2, 5, &DatasetConfig::default()).unwrap();
    let tensors: Vec<Tensor3> = samples
        .iter()
        .map(|s| classifier::image_tensor(&network_input(&s.image).unwrap()))
        .collect();
    let cls_data: Vec<_> = tensors.iter().cloned().zip(samples.iter().map(|s| s.class)).collect();
    let det_data: Vec<_> = tensors.iter().cloned().zip(samples.iter().map(|s| map_box_to_network(&s.bbox))).collect();
    let ccfg = TrainConfig { epochs: 2, batch_size: 2, seed: 12, ..TrainConfig::default() };
    let dcfg = DetectorTrainConfig { epochs: 2, batch_size: 2, seed: 12, ..DetectorTrainConfig::default() };

    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let c = classifier::fit(classifier::INPUT_SIZE, &cls_data, &ccfg).unwrap();
        let d = detector::fit(detector::INPUT_SIZE, &det_data, &dcfg).unwrap();
        let (cp, dp) = (dir.path().join(format!("c{run}.nsb")), dir.path().join(format!("d{run}.nsb")));
        c.weights.save(&cp).unwrap();
        d.weights.save(&dp).unwrap();
        files.push((std::fs::read(cp).unwrap(), std::fs::read(dp).unwrap()));
    }
    assert_eq!(files[0], files[1]);

    let other = classifier::fit(classifier::INPUT_SIZE, &cls_data, &TrainConfig { seed: 13, ..ccfg }).unwrap();
    assert_ne!(other.weights, classifier::fit(classifier::INPUT_SIZE, &cls_data, &ccfg).unwrap().weights);
}
