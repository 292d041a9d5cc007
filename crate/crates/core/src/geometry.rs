//! Axis-aligned boxes and binary pixel masks shared by every stage.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in real pixel coordinates. A pixel at `(x, y)` covers
/// `[x, x + 1) x [y, y + 1)`, so the tight box of a single pixel has unit size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.is_finite()
    }

    fn is_finite(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
    }

    /// Clips into `[0, w] x [0, h]`.
    pub fn clip(&self, w: f64, h: f64) -> Self {
        Self::new(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        )
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)
    }

    /// Grows each side by `fraction` of the box's own size.
    pub fn expand(&self, fraction: f64) -> Self {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        Self::new(self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    /// Integer pixel span `[x0, x1) x [y0, y1)` of pixels whose centers lie
    /// inside the box, limited to a `w x h` raster.
    pub fn pixel_span(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
        let hi = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
        (lo(self.x_min, w), lo(self.y_min, h), hi(self.x_max, w), hi(self.y_max, h))
    }
}

/// Intersection over union. Degenerate boxes have zero area and give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// One bit per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask bit count must equal w*h");
        Self { width, height, bits }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    /// Tight bounding box of the on pixels, or `None` for an empty mask.
    pub fn tight_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX)
            .then(|| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    pub fn to_gray(&self) -> crate::image::GrayImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        crate::image::GrayImage::new(self.width, self.height, px).expect("mask dims are valid")
    }

    /// Masks are stored as PGM with values {0, 255}; any nonzero pixel reads as on.
    pub fn from_gray(img: &crate::image::GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&p| p != 0).collect(),
        }
    }
}

/// Mask pixels that touch the outside: at least one off-mask 4-neighbor,
/// or lying on the raster border. Coordinates are `(x, y)` in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Boundary {
    pixels: Vec<(usize, usize)>,
}

impl Boundary {
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        Self { pixels }
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}
