//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nsb_core::classifier::{self, ClassifierWeights};
use nsb_core::geometry::{BBox, BinaryMask, Boundary};
use nsb_core::image::GrayImage;
use nsb_core::localizer::detector::{self, DetectorWeights};
use nsb_core::localizer::nms::detection_order;
use nsb_core::localizer::Detection;
use nsb_core::metrics::ConfusionCounts;
use nsb_core::nn::Tensor3;
use nsb_core::rng::SplitMix64;
use nsb_core::{iou, TumorClass};

pub mod gradcheck {
    /// Central-difference step.
    pub const EPSILON: f64 = 1e-4;
    pub const MAX_RELATIVE_ERROR: f64 = 1e-3;
    /// Gradients smaller than this in both routes are compared absolutely;
    /// below it the finite-difference truncation error dominates.
    pub const ABS_FLOOR: f64 = 1e-8;

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let diff = (analytic - numeric).abs();
        diff / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
    }
}

use gradcheck::{relative_error, EPSILON};

pub fn random_input(rng: &mut SplitMix64, n: usize) -> Tensor3 {
    Tensor3::from_vec(n, n, 1, (0..n * n).map(|_| rng.next_f64()).collect()).unwrap()
}

fn param<'a>(params: &'a mut [(&'static str, &mut [f64])], name: &str) -> &'a mut [f64] {
    params.iter_mut().find(|(n, _)| *n == name).map(|(_, p)| &mut **p).unwrap()
}

fn jitter(params: Vec<(&'static str, &mut [f64])>, rng: &mut SplitMix64) {
    for (_, p) in params {
        for v in p.iter_mut() {
            *v += rng.uniform(-0.05, 0.05);
        }
    }
}

/// Worst relative error per parameter tensor of the classifier on a 12x12
/// input, over both labels.
pub fn classifier_gradient_errors() -> Vec<(String, f64)> {
    let mut rng = SplitMix64::new(31);
    let mut w = ClassifierWeights::init(12, 7).unwrap();
    jitter(w.named_params_mut(), &mut rng);
    let x = random_input(&mut rng, 12);
    let mut out = Vec::new();
    for label in [TumorClass::Meningioma, TumorClass::Glioma] {
        let mut grad = ClassifierWeights::zeros(12).unwrap();
        classifier::loss_and_grad(&w, &x, label, &mut grad).unwrap();
        let data = [(x.clone(), label)];
        for (name, g) in grad.named_params() {
            let mut worst: f64 = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                let mut plus = w.clone();
                param(&mut plus.named_params_mut(), name)[i] += EPSILON;
                let mut minus = w.clone();
                param(&mut minus.named_params_mut(), name)[i] -= EPSILON;
                let lp = classifier::mean_loss(&plus, &data).unwrap();
                let lm = classifier::mean_loss(&minus, &data).unwrap();
                worst = worst.max(relative_error(gi, (lp - lm) / (2.0 * EPSILON)));
            }
            out.push((format!("{name}[{}]", label.name()), worst));
        }
    }
    out
}

/// Worst relative error per parameter tensor of the detector on a 24x24 input.
pub fn detector_gradient_errors() -> Vec<(String, f64)> {
    let mut rng = SplitMix64::new(77);
    let mut w = DetectorWeights::init(24, 5).unwrap();
    jitter(w.named_params_mut(), &mut rng);
    let x = random_input(&mut rng, 24);
    let gt = BBox::new(5.5, 4.0, 18.0, 17.5);
    let targets = detector::sample_targets(&w.anchors(), &gt, &mut rng).unwrap();
    assert!(!targets.regression.is_empty());
    let mut grad = DetectorWeights::zeros(24).unwrap();
    detector::loss_and_grad(&w, &x, &targets, &mut grad).unwrap();
    let mut out = Vec::new();
    for (name, g) in grad.named_params() {
        let mut worst: f64 = 0.0;
        for (i, &gi) in g.iter().enumerate() {
            let mut plus = w.clone();
            param(&mut plus.named_params_mut(), name)[i] += EPSILON;
            let mut minus = w.clone();
            param(&mut minus.named_params_mut(), name)[i] -= EPSILON;
            let lp = detector::loss(&plus, &x, &targets).unwrap().total();
            let lm = detector::loss(&minus, &x, &targets).unwrap().total();
            worst = worst.max(relative_error(gi, (lp - lm) / (2.0 * EPSILON)));
        }
        out.push((name.to_string(), worst));
    }
    out
}

pub fn brute_counts(p: &BinaryMask, g: &BinaryMask) -> ConfusionCounts {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for y in 0..p.height() {
        for x in 0..p.width() {
            match (p.get(x, y), g.get(x, y)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    ConfusionCounts { tp, fp, fn_, tn }
}

pub fn brute_bde(a: &Boundary, b: &Boundary) -> f64 {
    let dir = |from: &Boundary, to: &Boundary| {
        from.pixels()
            .iter()
            .map(|&(px, py)| {
                to.pixels()
                    .iter()
                    .map(|&(qx, qy)| ((px as f64 - qx as f64).powi(2) + (py as f64 - qy as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    (dir(a, b) + dir(b, a)) / 2.0
}

/// Random same-size masks up to 32x32 with a random fill density.
pub fn random_mask_pair(rng: &mut SplitMix64) -> (BinaryMask, BinaryMask) {
    let w = 1 + rng.below(32) as usize;
    let h = 1 + rng.below(32) as usize;
    let (da, db) = (rng.next_f64(), rng.next_f64());
    let a = (0..w * h).map(|_| rng.next_f64() < da).collect();
    let b = (0..w * h).map(|_| rng.next_f64() < db).collect();
    (BinaryMask::from_bits(w, h, a), BinaryMask::from_bits(w, h, b))
}

/// Nested-loop Prewitt magnitude; zero on the one-pixel border.
pub fn prewitt_oracle(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let kx = [[-1.0, 0.0, 1.0]; 3];
    let mut out = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (ky, row) in kx.iter().enumerate() {
                for (kxi, &k) in row.iter().enumerate() {
                    gx += k * img.get(x + kxi - 1, y + ky - 1) as f64;
                    // Transposed kernel.
                    gy += k * img.get(x + ky - 1, y + kxi - 1) as f64;
                }
            }
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Quadratic reference: repeatedly take the best remaining box and drop
/// everything overlapping it.
pub fn nms_reference(dets: &[Detection], t: f64) -> Vec<Detection> {
    let mut remaining = dets.to_vec();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if detection_order(&remaining[i], &remaining[best]).is_lt() {
                best = i;
            }
        }
        let b = remaining.remove(best);
        remaining.retain(|d| iou(&d.bbox, &b.bbox) <= t);
        keep.push(b);
    }
    keep
}

/// Up to 50 boxes on a coarse grid, so exact overlaps and score ties occur.
pub fn random_detections(rng: &mut SplitMix64) -> Vec<Detection> {
    let n = rng.below(51) as usize;
    (0..n)
        .map(|_| {
            let (x, y) = (rng.below(20) as f64, rng.below(20) as f64);
            let (w, h) = (1.0 + rng.below(11) as f64, 1.0 + rng.below(11) as f64);
            Detection {
                bbox: BBox::new(4.0 * x, 4.0 * y, 4.0 * (x + w), 4.0 * (y + h)),
                confidence: rng.below(10) as f64 / 10.0,
            }
        })
        .collect()
}
