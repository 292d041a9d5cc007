//! Prewitt edge segmentation inside a bounding box.
//!
//! `prewitt_gradient` -> `threshold_mask` -> `extract_boundary`. Inside the
//! box, gradient magnitudes are binarized with Otsu's threshold (never below
//! [`MIN_EDGE_MAGNITUDE`]), closed with one 3x3 dilation and erosion, and the
//! largest 8-connected edge component that encloses something is kept
//! together with every pixel it encloses, minus its outermost layer. Background reachability for the fill
//! uses 4-connectivity.

use std::collections::VecDeque;

use thiserror::Error;

use crate::geometry::{BBox, BinaryMask, Boundary};
use crate::image::GrayImage;

/// Weakest gradient magnitude (8-bit intensity units) treated as an edge.
/// Sits above the tail of the magnitude distribution produced by sensor
/// noise of a few intensity levels.
pub const MIN_EDGE_MAGNITUDE: f64 = 48.0;
const OTSU_BINS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("image {w}x{h} smaller than the 3x3 Prewitt kernel")]
    TooSmall { w: usize, h: usize },
    #[error("region {0:?} covers no pixels")]
    EmptyRegion(BBox),
    #[error("region {region:?} extends outside the {w}x{h} frame")]
    OutOfFrame { region: BBox, w: usize, h: usize },
}

/// Real-valued raster of gradient magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GradientMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// `sqrt(Gx^2 + Gy^2)` with Gx = [-1 0 1] repeated over three rows and Gy
/// its transpose. Border pixels without full 3x3 support are 0.
pub fn prewitt_gradient(img: &GrayImage) -> Result<GradientMap, SegmentError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(SegmentError::TooSmall { w, h });
    }
    let p = img.pixels();
    let at = |x: usize, y: usize| p[y * w + x] as i32;
    let mut values = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + at(x, y - 1) + at(x + 1, y - 1));
            values[y * w + x] = ((gx * gx + gy * gy) as f64).sqrt();
        }
    }
    Ok(GradientMap { width: w, height: h, values })
}

/// Otsu's threshold over a 256-bin histogram spanning `[0, max]`. Returns
/// the upper edge of the last bin assigned to the low class, or `None` when
/// all values are zero.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let bin_width = max / OTSU_BINS as f64;
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        let b = ((v / bin_width) as usize).min(OTSU_BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    Some((best + 1) as f64 * bin_width)
}

/// Result of binarizing one region.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub mask: BinaryMask,
    /// Edge threshold used, or `None` when the region had no gradient.
    pub threshold: Option<f64>,
}

impl ThresholdOutcome {
    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

fn check_in_frame(region: &BBox, w: usize, h: usize) -> Result<(), SegmentError> {
    let frame = BBox::new(0.0, 0.0, w as f64, h as f64);
    if frame.contains_box(region) {
        Ok(())
    } else {
        Err(SegmentError::OutOfFrame { region: *region, w, h })
    }
}

fn region_span(region: &BBox, w: usize, h: usize) -> Result<(usize, usize, usize, usize), SegmentError> {
    if !region.is_valid() {
        return Err(SegmentError::EmptyRegion(*region));
    }
    let (x0, y0, x1, y1) = region.pixel_span(w, h);
    if x1 <= x0 || y1 <= y0 {
        return Err(SegmentError::EmptyRegion(*region));
    }
    Ok((x0, y0, x1, y1))
}

/// Binarizes gradient magnitudes inside `region` into a solid mask. Pixels
/// outside the region are always off.
pub fn threshold_mask(grad: &GradientMap, region: &BBox) -> Result<ThresholdOutcome, SegmentError> {
    let (w, h) = (grad.width, grad.height);
    check_in_frame(region, w, h)?;
    let (x0, y0, x1, y1) = region_span(region, w, h)?;
    let (rw, rh) = (x1 - x0, y1 - y0);
    let local: Vec<f64> = (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| grad.get(x, y)).collect();
    let mut mask = BinaryMask::empty(w, h);
    let Some(otsu) = otsu_threshold(&local) else {
        return Ok(ThresholdOutcome { mask, threshold: None });
    };
    let threshold = otsu.max(MIN_EDGE_MAGNITUDE);
    let edges: Vec<bool> = local.iter().map(|&v| v >= threshold).collect();
    let closed = erode(&dilate(&edges, rw, rh), rw, rh);
    let solid = fill_largest_component(&closed, rw, rh);
    for ly in 0..rh {
        for lx in 0..rw {
            if solid[ly * rw + lx] {
                mask.set(x0 + lx, y0 + ly, true);
            }
        }
    }
    Ok(ThresholdOutcome { mask, threshold: Some(threshold) })
}

/// 3x3 dilation; neighbors outside the raster are ignored.
pub fn dilate(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    morph(bits, w, h, false)
}

/// 3x3 erosion; neighbors outside the raster are ignored, so the raster
/// edge does not erode.
pub fn erode(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    morph(bits, w, h, true)
}

fn morph(bits: &[bool], w: usize, h: usize, erosion: bool) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            let mut all = true;
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let b = bits[ny * w + nx];
                    any |= b;
                    all &= b;
                }
            }
            out[y * w + x] = if erosion { all } else { any };
        }
    }
    out
}

/// Labels 8-connected components of on pixels. Returns per-pixel labels
/// (0 = background) and component sizes indexed by `label - 1`, with labels
/// assigned in raster scan order.
pub fn label_components(bits: &[bool], w: usize, h: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = ny * w + nx;
                    if bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 8-connected component that encloses at least one
/// pixel, together with everything it encloses, minus one outer 4-neighbor
/// layer. Components are tried largest first (scan order on ties); open
/// fragments delimit no region and are skipped. Empty when nothing is
/// enclosed.
pub fn fill_largest_component(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (labels, sizes) = label_components(bits, w, h);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for idx in order {
        let label = idx as u32 + 1;
        let wall: Vec<bool> = labels.iter().map(|&l| l == label).collect();
        let outside = flood_outside(&wall, w, h);
        if (0..w * h).any(|i| !wall[i] && !outside[i]) {
            let solid: Vec<bool> = outside.iter().map(|&o| !o).collect();
            return peel(&solid, w, h);
        }
    }
    vec![false; w * h]
}

/// Pixels reachable from the raster border through non-wall pixels
/// (4-connected).
fn flood_outside(wall: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !wall[y * w + x] {
                outside[y * w + x] = true;
                queue.push_back(y * w + x);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !wall[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    outside
}

/// Removes on pixels with an off 4-neighbor inside the raster. Prewitt
/// responds on both sides of an intensity step, so the filled edge ring
/// extends about one pixel past the contour.
fn peel(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = bits.to_vec();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if bits[i]
                && ((x > 0 && !bits[i - 1])
                    || (x + 1 < w && !bits[i + 1])
                    || (y > 0 && !bits[i - w])
                    || (y + 1 < h && !bits[i + w]))
            {
                out[i] = false;
            }
        }
    }
    out
}

/// Mask pixels with at least one off-mask 4-neighbor or on the raster border.
pub fn extract_boundary(mask: &BinaryMask) -> Boundary {
    let (w, h) = (mask.width(), mask.height());
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if on_border
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1)
            {
                px.push((x, y));
            }
        }
    }
    Boundary::from_pixels(px)
}

/// Copy of `img` with every boundary pixel set to 255.
pub fn render_overlay(img: &GrayImage, boundary: &Boundary) -> GrayImage {
    let mut out = img.clone();
    for &(x, y) in boundary.pixels() {
        if x < out.width() && y < out.height() {
            out.set(x, y, 255);
        }
    }
    out
}

/// Full fine segmentation of one slice inside `bbox`, at the slice's own
/// resolution.
pub fn segment_roi(img: &GrayImage, bbox: &BBox) -> Result<(BinaryMask, Boundary), SegmentError> {
    check_in_frame(bbox, img.width(), img.height())?;
    let grad = prewitt_gradient(img)?;
    let outcome = threshold_mask(&grad, bbox)?;
    let boundary = extract_boundary(&outcome.mask);
    Ok((outcome.mask, boundary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn constant_image_has_no_gradient() {
        let g = prewitt_gradient(&GrayImage::filled(10, 8, 77)).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert!(matches!(prewitt_gradient(&GrayImage::filled(2, 8, 0)), Err(SegmentError::TooSmall { .. })));
    }

    #[test]
    fn vertical_step_gives_300() {
        let img = GrayImage::new(10, 6, (0..60).map(|i| if i % 10 >= 5 { 100 } else { 0 }).collect()).unwrap();
        let g = prewitt_gradient(&img).unwrap();
        for y in 1..5 {
            assert_eq!(g.get(4, y), 300.0);
            assert_eq!(g.get(5, y), 300.0);
            assert_eq!(g.get(3, y), 0.0);
            assert_eq!(g.get(6, y), 0.0);
        }
    }

    #[test]
    fn otsu_splits_bimodal_values() {
        let mut v = vec![1.0; 100];
        v.extend(vec![9.0; 50]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 1.0 && t <= 9.0, "{t}");
        assert_eq!(otsu_threshold(&[0.0, 0.0]), None);
    }

    #[test]
    fn zero_gradient_gives_empty_mask() {
        let grad = GradientMap { width: 8, height: 8, values: vec![0.0; 64] };
        let out = threshold_mask(&grad, &BBox::new(1.0, 1.0, 7.0, 7.0)).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.threshold, None);
        assert!(matches!(
            threshold_mask(&grad, &BBox::new(3.0, 3.0, 3.0, 5.0)),
            Err(SegmentError::EmptyRegion(_))
        ));
    }

    #[test]
    fn ring_is_filled() {
        let (w, h) = (9, 9);
        let ring = BinaryMask::from_fn(w, h, |x, y| (2..=6).contains(&x) && (2..=6).contains(&y) && (x == 2 || x == 6 || y == 2 || y == 6));
        let filled = fill_largest_component(ring.bits(), w, h);
        let expected = BinaryMask::from_fn(w, h, |x, y| (3..=5).contains(&x) && (3..=5).contains(&y));
        assert_eq!(filled, expected.bits());
        // An open arc encloses nothing.
        let arc = BinaryMask::from_fn(w, h, |x, y| y == 4 && x < 6);
        assert!(fill_largest_component(arc.bits(), w, h).iter().all(|&b| !b));
        // A longer open arc does not shadow a smaller closed ring.
        let (w, h) = (20, 12);
        let both = BinaryMask::from_fn(w, h, |x, y| {
            let ring = (2..=6).contains(&x) && (2..=6).contains(&y) && (x == 2 || x == 6 || y == 2 || y == 6);
            ring || (x == 12 && y < 12)
        });
        let filled = fill_largest_component(both.bits(), w, h);
        let expected = BinaryMask::from_fn(w, h, |x, y| (3..=5).contains(&x) && (3..=5).contains(&y));
        assert_eq!(filled, expected.bits());
    }

    #[test]
    fn boundary_fixtures() {
        let mut one = BinaryMask::empty(5, 5);
        one.set(2, 2, true);
        assert_eq!(extract_boundary(&one).pixels(), &[(2, 2)]);
        let square = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        let b = extract_boundary(&square);
        assert_eq!(b.len(), 12);
        for &(x, y) in b.pixels() {
            assert!(square.get(x, y));
        }
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        assert_eq!(extract_boundary(&full).len(), 8);
    }

    #[test]
    fn boundary_matches_scan_oracle() {
        let mut rng = SplitMix64::new(44);
        for _ in 0..50 {
            let (w, h) = (1 + rng.below(20) as usize, 1 + rng.below(20) as usize);
            let m = BinaryMask::from_fn(w, h, |_, _| false);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.next_f64() < 0.6).collect();
            let m = BinaryMask::from_bits(m.width(), m.height(), bits);
            let mut oracle = Vec::new();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if !m.get(x as usize, y as usize) {
                        continue;
                    }
                    let off = |dx: isize, dy: isize| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || !m.get(nx as usize, ny as usize)
                    };
                    if off(-1, 0) || off(1, 0) || off(0, -1) || off(0, 1) {
                        oracle.push((x as usize, y as usize));
                    }
                }
            }
            assert_eq!(extract_boundary(&m), Boundary::from_pixels(oracle));
        }
    }

    #[test]
    fn overlay_marks_boundary_only() {
        let img = GrayImage::filled(6, 6, 40);
        let b = Boundary::from_pixels(vec![(1, 1), (4, 2)]);
        let o = render_overlay(&img, &b);
        assert_eq!(o.get(1, 1), 255);
        assert_eq!(o.get(4, 2), 255);
        assert_eq!(o.pixels().iter().filter(|&&v| v == 255).count(), 2);
        assert_eq!(o.get(0, 0), 40);
    }

    #[test]
    fn segment_rejects_out_of_frame_box() {
        let img = GrayImage::filled(16, 16, 0);
        assert!(matches!(
            segment_roi(&img, &BBox::new(-1.0, 0.0, 8.0, 8.0)),
            Err(SegmentError::OutOfFrame { .. })
        ));
    }
}
