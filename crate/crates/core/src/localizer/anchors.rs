use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};

pub const ANCHOR_SCALES: [f64; 3] = [16.0, 32.0, 64.0];
pub const ANCHOR_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];
pub const ANCHORS_PER_CELL: usize = 9;

pub const POSITIVE_IOU: f64 = 0.7;
pub const NEGATIVE_IOU: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub row: usize,
    pub col: usize,
    /// `scale_index * 3 + ratio_index`, in `[0, 9)`.
    pub index: usize,
}

impl Anchor {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.width, self.height)
    }
}

/// Nine anchors per feature cell (3 scales x 3 aspect ratios), ordered by
/// cell in row-major order, then by anchor index. Ratio is width / height.
pub fn generate_anchors(feat_h: usize, feat_w: usize, stride: f64) -> Vec<Anchor> {
    let mut out = Vec::with_capacity(feat_h * feat_w * ANCHORS_PER_CELL);
    for row in 0..feat_h {
        for col in 0..feat_w {
            let cx = (col as f64 + 0.5) * stride;
            let cy = (row as f64 + 0.5) * stride;
            for (si, &scale) in ANCHOR_SCALES.iter().enumerate() {
                for (ri, &ratio) in ANCHOR_RATIOS.iter().enumerate() {
                    let r = ratio.sqrt();
                    out.push(Anchor {
                        cx,
                        cy,
                        width: scale * r,
                        height: scale / r,
                        row,
                        col,
                        index: si * 3 + ri,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum DeltaError {
    #[error("ground-truth box has non-positive size {0}x{1}")]
    GroundTruth(f64, f64),
    #[error("anchor has non-positive size {0}x{1}")]
    Anchor(f64, f64),
}

/// Center offsets relative to anchor size, log-space size ratios.
pub fn encode_deltas(anchor: &Anchor, gt: &BBox) -> Result<[f64; 4], DeltaError> {
    if !(anchor.width > 0.0 && anchor.height > 0.0) {
        return Err(DeltaError::Anchor(anchor.width, anchor.height));
    }
    let (gw, gh) = (gt.width(), gt.height());
    if !(gw > 0.0 && gh > 0.0) {
        return Err(DeltaError::GroundTruth(gw, gh));
    }
    let (gx, gy) = gt.center();
    Ok([
        (gx - anchor.cx) / anchor.width,
        (gy - anchor.cy) / anchor.height,
        (gw / anchor.width).ln(),
        (gh / anchor.height).ln(),
    ])
}

/// Inverse of [`encode_deltas`], without clipping.
pub fn decode_deltas(anchor: &Anchor, d: &[f64; 4]) -> BBox {
    let cx = anchor.cx + d[0] * anchor.width;
    let cy = anchor.cy + d[1] * anchor.height;
    let w = anchor.width * d[2].exp();
    let h = anchor.height * d[3].exp();
    BBox::from_center(cx, cy, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Labels each anchor against the single ground-truth box: positive at
/// IoU >= 0.7, negative at IoU <= 0.3, ignored otherwise. The first anchor
/// with the highest IoU is always positive, provided that IoU is nonzero.
pub fn assign_anchors(anchors: &[Anchor], gt: &BBox) -> Vec<AnchorLabel> {
    let ious: Vec<f64> = anchors.iter().map(|a| iou(&a.bbox(), gt)).collect();
    let mut labels: Vec<AnchorLabel> = ious
        .iter()
        .map(|&v| {
            if v >= POSITIVE_IOU {
                AnchorLabel::Positive
            } else if v <= NEGATIVE_IOU {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    let mut best = None;
    for (i, &v) in ious.iter().enumerate() {
        if v > 0.0 && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    if let Some((i, _)) = best {
        labels[i] = AnchorLabel::Positive;
    }
    labels
}
