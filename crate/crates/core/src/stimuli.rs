//! Builds a DSIS stimulus pool from labelled slices: genuine overlays come
//! from a pipeline, decoys from a deliberately displaced box.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsis::{DsisError, Stimulus, StimulusPool};
use crate::evaluate::{EvalError, Pipeline};
use crate::image::{write_image, ImageError};
use crate::rng::SplitMix64;
use crate::segment::{self, render_overlay, SegmentError};
use crate::{BBox, Boundary, GrayImage, Sample, TumorClass};

pub const REFERENCE_DIR: &str = "reference";
pub const PROCESSED_DIR: &str = "processed";

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("need {need} {class} slices, have {have}")]
    NotEnoughSamples { class: TumorClass, need: usize, have: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dsis(#[from] DsisError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StimuliConfig {
    pub genuine_per_class: usize,
    pub decoys_per_class: usize,
    pub seed: u64,
}

impl Default for StimuliConfig {
    fn default() -> Self {
        Self { genuine_per_class: 12, decoys_per_class: 3, seed: 7 }
    }
}

/// Ground-truth box moved sideways by half its width (to the side with
/// room), clipped to the frame.
pub fn decoy_box(truth: &BBox, width: usize, height: usize) -> BBox {
    let dx = truth.width() / 2.0;
    let shifted = if truth.x_max + dx <= width as f64 { truth.translate(dx, 0.0) } else { truth.translate(-dx, 0.0) };
    shifted.clip(width as f64, height as f64)
}

/// Contour of a deliberately wrong segmentation. Falls back to the outline
/// of the displaced box when the displaced region contains nothing closed.
pub fn decoy_boundary(sample: &Sample) -> Result<Boundary, SegmentError> {
    let (w, h) = (sample.image.width(), sample.image.height());
    let region = decoy_box(&sample.bbox, w, h);
    let (_, boundary) = segment::segment_roi(&sample.image, &region)?;
    if !boundary.is_empty() {
        return Ok(boundary);
    }
    let (x0, y0, x1, y1) = region.pixel_span(w, h);
    let mut px = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if x == x0 || y == y0 || x + 1 == x1 || y + 1 == y1 {
                px.push((x, y));
            }
        }
    }
    Ok(Boundary::from_pixels(px))
}

struct Pending<'a> {
    sample: &'a Sample,
    processed: GrayImage,
    is_decoy: bool,
}

/// Writes `reference/`, `processed/` and the pool listing under `out`.
/// Each class contributes `genuine_per_class + decoys_per_class` distinct
/// slices picked by a seeded shuffle; stimulus ids are opaque
/// (`stim_000`, ...) and assigned in a second shuffled order so they carry
/// no class or decoy information.
pub fn build_stimulus_pool(
    samples: &[Sample],
    pipeline: &dyn Pipeline,
    cfg: &StimuliConfig,
    out: &Path,
) -> Result<StimulusPool, StimuliError> {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut pending = Vec::new();
    for class in TumorClass::ALL {
        let mut picked: Vec<&Sample> = samples.iter().filter(|s| s.class == class).collect();
        let need = cfg.genuine_per_class + cfg.decoys_per_class;
        if picked.len() < need {
            return Err(StimuliError::NotEnoughSamples { class, need, have: picked.len() });
        }
        rng.shuffle(&mut picked);
        for (i, sample) in picked.into_iter().take(need).enumerate() {
            let is_decoy = i >= cfg.genuine_per_class;
            let boundary =
                if is_decoy { decoy_boundary(sample)? } else { pipeline.analyze(sample)?.boundary };
            pending.push(Pending { sample, processed: render_overlay(&sample.image, &boundary), is_decoy });
        }
    }
    rng.shuffle(&mut pending);

    std::fs::create_dir_all(out.join(REFERENCE_DIR))?;
    std::fs::create_dir_all(out.join(PROCESSED_DIR))?;
    let mut stimuli = Vec::with_capacity(pending.len());
    for (k, p) in pending.into_iter().enumerate() {
        let id = format!("stim_{k:03}");
        let reference: PathBuf = [REFERENCE_DIR, &format!("{id}.pgm")].iter().collect();
        let processed: PathBuf = [PROCESSED_DIR, &format!("{id}.pgm")].iter().collect();
        write_image(&p.sample.image, out.join(&reference))?;
        write_image(&p.processed, out.join(&processed))?;
        stimuli.push(Stimulus { id, reference, processed, class: p.sample.class, is_decoy: p.is_decoy });
    }
    let pool = StimulusPool::new(out, stimuli)?;
    pool.save()?;
    Ok(pool)
}
