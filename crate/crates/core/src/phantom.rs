//! Synthetic "phantom MRI" slices with analytically known tumor masks.
//!
//! A phantom is a noisy disc ("brain") on a dark background with one bright
//! tumor region inside it. The two classes differ in shape, edge profile,
//! intensity and placement:
//!
//! * Meningioma: circular, sharp edge, brighter, placed toward the brain rim.
//! * Glioma: perturbed-radius blob, sigmoid edge a few pixels wide, placed
//!   toward the brain center.
//!
//! The ground-truth mask is the set of pixels whose center lies inside the
//! tumor contour (for gliomas, where the edge profile crosses one half).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BinaryMask};
use crate::image::{to_u8, GrayImage};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TumorClass {
    Meningioma,
    Glioma,
}

impl TumorClass {
    pub const ALL: [TumorClass; 2] = [TumorClass::Meningioma, TumorClass::Glioma];

    /// Output index in the classifier head.
    pub fn index(self) -> usize {
        match self {
            TumorClass::Meningioma => 0,
            TumorClass::Glioma => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TumorClass::Meningioma => "meningioma",
            TumorClass::Glioma => "glioma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "meningioma" => Some(TumorClass::Meningioma),
            "glioma" => Some(TumorClass::Glioma),
            _ => None,
        }
    }
}

impl std::fmt::Display for TumorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("tumor_scale {0} outside (0.05, 0.4)")]
    TumorScale(f64),
    #[error("noise_sigma {0} must be finite and >= 0")]
    Noise(f64),
    #[error("brain_scale {0} outside (0, 0.5]")]
    BrainScale(f64),
    #[error("image_size {0} too small")]
    ImageSize(usize),
    #[error("tumor radius {tumor:.1} px does not fit inside brain radius {brain:.1} px")]
    Degenerate { tumor: f64, brain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub class_label: TumorClass,
    pub image_size: usize,
    /// Nominal tumor diameter as a fraction of the image width.
    pub tumor_scale: f64,
    pub noise_sigma: f64,
    /// Brain disc radius as a fraction of the image size.
    pub brain_scale: f64,
}

impl PhantomSpec {
    pub fn new(seed: u64, class_label: TumorClass, tumor_scale: f64) -> Self {
        Self {
            seed,
            class_label,
            image_size: 512,
            tumor_scale,
            noise_sigma: 6.0,
            brain_scale: DEFAULT_BRAIN_SCALE,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if !(self.tumor_scale > 0.05 && self.tumor_scale < 0.4) {
            return Err(PhantomError::TumorScale(self.tumor_scale));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(PhantomError::Noise(self.noise_sigma));
        }
        if !(self.brain_scale > 0.0 && self.brain_scale <= 0.5) {
            return Err(PhantomError::BrainScale(self.brain_scale));
        }
        if self.image_size < 16 {
            return Err(PhantomError::ImageSize(self.image_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub bbox: BBox,
}

const BACKGROUND: f64 = 12.0;
const BRAIN_CENTER_LEVEL: f64 = 105.0;
const BRAIN_RIM_LEVEL: f64 = 85.0;
const MENINGIOMA_LEVEL: f64 = 215.0;
const GLIOMA_LEVEL: f64 = 180.0;
pub const DEFAULT_BRAIN_SCALE: f64 = 0.42;
/// Minimum gap between tumor and brain rim, as a fraction of brain radius.
const RIM_GAP: f64 = 0.08;
const GLIOMA_HARMONICS: usize = 4;
const GLIOMA_MAX_AMPLITUDE: f64 = 0.06;
/// Width (px at 512) of the glioma sigmoid edge.
const GLIOMA_EDGE_WIDTH: f64 = 1.5;

struct TumorShape {
    cx: f64,
    cy: f64,
    radius: f64,
    /// (amplitude, phase) per harmonic 2..; empty for circles.
    harmonics: Vec<(f64, f64)>,
}

impl TumorShape {
    fn radius_at(&self, theta: f64) -> f64 {
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(a, phi))| a * ((k as f64 + 2.0) * theta + phi).cos())
            .sum();
        self.radius * (1.0 + wobble)
    }

    fn max_radius(&self) -> f64 {
        self.radius * (1.0 + self.harmonics.iter().map(|h| h.0).sum::<f64>())
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let size = spec.image_size;
    let s = size as f64;
    let scale = s / 512.0;
    let mut rng = SplitMix64::new(spec.seed);

    let brain_cx = s / 2.0 + rng.uniform(-0.02, 0.02) * s;
    let brain_cy = s / 2.0 + rng.uniform(-0.02, 0.02) * s;
    let brain_r = spec.brain_scale * s * rng.uniform(0.97, 1.03);

    let radius = spec.tumor_scale * s / 2.0;
    let harmonics = match spec.class_label {
        TumorClass::Meningioma => Vec::new(),
        TumorClass::Glioma => (0..GLIOMA_HARMONICS)
            .map(|_| {
                (
                    rng.uniform(0.3, 1.0) * GLIOMA_MAX_AMPLITUDE,
                    rng.uniform(0.0, std::f64::consts::TAU),
                )
            })
            .collect(),
    };
    let mut tumor = TumorShape { cx: 0.0, cy: 0.0, radius, harmonics };
    let available = brain_r * (1.0 - RIM_GAP) - tumor.max_radius();
    if available <= 0.0 {
        return Err(PhantomError::Degenerate { tumor: tumor.max_radius(), brain: brain_r });
    }
    let (lo, hi) = match spec.class_label {
        TumorClass::Meningioma => (0.7, 1.0),
        TumorClass::Glioma => (0.0, 0.45),
    };
    let dist = available * rng.uniform(lo, hi);
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    tumor.cx = brain_cx + dist * angle.cos();
    tumor.cy = brain_cy + dist * angle.sin();

    let edge_width = GLIOMA_EDGE_WIDTH * scale.max(0.25);
    let mut pixels = Vec::with_capacity(size * size);
    let mut mask = BinaryMask::empty(size, size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rb = ((px - brain_cx).powi(2) + (py - brain_cy).powi(2)).sqrt();
            let mut v = if rb <= brain_r {
                BRAIN_CENTER_LEVEL + (BRAIN_RIM_LEVEL - BRAIN_CENTER_LEVEL) * (rb / brain_r).powi(2)
            } else {
                BACKGROUND
            };
            let (dx, dy) = (px - tumor.cx, py - tumor.cy);
            let rho = (dx * dx + dy * dy).sqrt();
            match spec.class_label {
                TumorClass::Meningioma => {
                    if rho <= tumor.radius {
                        v = MENINGIOMA_LEVEL;
                        mask.set(x, y, true);
                    }
                }
                TumorClass::Glioma => {
                    // Far pixels skip the trig.
                    if rho <= tumor.max_radius() + 8.0 * edge_width {
                        let r = tumor.radius_at(dy.atan2(dx));
                        let w = 1.0 / (1.0 + ((rho - r) / edge_width).exp());
                        v += (GLIOMA_LEVEL - v) * w;
                        if rho <= r {
                            mask.set(x, y, true);
                        }
                    }
                }
            }
            if spec.noise_sigma > 0.0 {
                v += spec.noise_sigma * rng.normal();
            }
            pixels.push(to_u8(v));
        }
    }
    let image = GrayImage::new(size, size, pixels).expect("square raster");
    let bbox = mask.tight_box().ok_or(PhantomError::Degenerate { tumor: 0.0, brain: brain_r })?;
    Ok(Phantom { image, mask, bbox })
}
