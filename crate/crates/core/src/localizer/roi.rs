use thiserror::Error;

use crate::geometry::BBox;
use crate::nn::Tensor3;

pub const ROI_OUT: usize = 7;

#[derive(Debug, Error, PartialEq)]
#[error("roi {0:?} is degenerate after clipping to the feature map")]
pub struct DegenerateRoi(pub BBox);

/// Cell range `[start, end)` of bin `i` out of `bins` over a span of `len`
/// cells starting at `origin`. Edges use floor/ceil of the proportional
/// position, so every bin covers at least one cell.
pub fn bin_range(origin: usize, len: usize, bins: usize, i: usize) -> (usize, usize) {
    let start = (i * len) / bins;
    let end = ((i + 1) * len).div_ceil(bins);
    (origin + start, origin + end.max(start + 1))
}

/// Max-pools the feature-map region under `roi` (feature coordinates) into
/// an `out x out` grid per channel.
pub fn roi_pool(feat: &Tensor3, roi: &BBox, out: usize) -> Result<Tensor3, DegenerateRoi> {
    let (h, w, c) = feat.shape();
    let clipped = roi.clip(w as f64, h as f64);
    let x0 = clipped.x_min.floor() as usize;
    let y0 = clipped.y_min.floor() as usize;
    let x1 = (clipped.x_max.ceil() as usize).min(w);
    let y1 = (clipped.y_max.ceil() as usize).min(h);
    if !roi.is_valid() || x1 <= x0 || y1 <= y0 || clipped.width() <= 0.0 || clipped.height() <= 0.0 {
        return Err(DegenerateRoi(*roi));
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let mut pooled = Tensor3::zeros(out, out, c);
    for by in 0..out {
        let (ys, ye) = bin_range(y0, rh, out, by);
        for bx in 0..out {
            let (xs, xe) = bin_range(x0, rw, out, bx);
            for ch in 0..c {
                let mut m = f64::NEG_INFINITY;
                for y in ys..ye {
                    for x in xs..xe {
                        m = m.max(feat.get(y, x, ch));
                    }
                }
                let i = pooled.idx(by, bx, ch);
                pooled.data_mut()[i] = m;
            }
        }
    }
    Ok(pooled)
}
