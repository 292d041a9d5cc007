//! Seeded inputs shared by the criterion benchmarks in `benches/`.

use nsb_core::dataset::{generate_samples, DatasetConfig};
use nsb_core::localizer::Detection;
use nsb_core::rng::SplitMix64;
use nsb_core::{BBox, Sample, Tensor3};

pub fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
    let mut rng = SplitMix64::new(seed);
    Tensor3::from_vec(h, w, c, (0..h * w * c).map(|_| rng.next_f64()).collect()).expect("dims")
}

/// `n` overlapping boxes inside a 128 frame.
pub fn random_detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let x = rng.next_f64() * 100.0;
            let y = rng.next_f64() * 100.0;
            let w = 8.0 + rng.next_f64() * 20.0;
            let h = 8.0 + rng.next_f64() * 20.0;
            Detection { bbox: BBox::new(x, y, x + w, y + h), confidence: rng.next_f64() }
        })
        .collect()
}

pub fn phantom_slice(seed: u64) -> Sample {
    generate_samples(1, seed, &DatasetConfig::default()).expect("phantom").remove(0)
}
