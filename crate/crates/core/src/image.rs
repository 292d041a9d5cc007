//! Grayscale rasters, binary PGM (P5) I/O, block-mean downsampling and
//! unit-interval normalization.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{w}x{h} image cannot be block-averaged to {tw}x{th}")]
    BlockRatio { w: usize, h: usize, tw: usize, th: usize },
    #[error("invalid dimensions {0}x{1}")]
    Dimensions(usize, usize),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageError::Dimensions(width, height));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Canonical P5 encoding: `"P5\n<w> <h>\n255\n"` followed by the raw bytes.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a binary PGM. Whitespace between header tokens may be any
    /// run of ASCII whitespace, and `#` comments run to end of line.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos)
            .ok_or_else(|| ImageError::MalformedHeader("missing magic".into()))?;
        if magic != b"P5" {
            return Err(ImageError::MalformedHeader(format!(
                "expected magic P5, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if width == 0 || height == 0 {
            return Err(ImageError::MalformedHeader(format!("zero dimension {width}x{height}")));
        }
        if maxval != 255 {
            return Err(ImageError::UnsupportedMaxval(maxval as u32));
        }
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(ImageError::MalformedHeader("no separator after maxval".into())),
        }
        let expected = width * height;
        let payload = &bytes[pos..];
        if payload.len() < expected {
            return Err(ImageError::Truncated { expected, found: payload.len() });
        }
        Ok(Self { width, height, pixels: payload[..expected].to_vec() })
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, ImageError> {
    let tok = next_token(bytes, pos)
        .ok_or_else(|| ImageError::MalformedHeader(format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            ImageError::MalformedHeader(format!("bad {what} {:?}", String::from_utf8_lossy(tok)))
        })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::Missing(path.to_path_buf()),
        _ => ImageError::Io { path: path.to_path_buf(), source: e },
    })?;
    GrayImage::decode_pgm(&bytes)
}

pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, img.encode_pgm())
        .map_err(|e| ImageError::Io { path: path.to_path_buf(), source: e })
}

/// Rounds half-up to the nearest integer. This is the one rounding rule
/// used for every real-to-intensity conversion in the crate.
#[inline]
pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Converts a real intensity to 8 bits with half-up rounding and clamping.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    round_half_up(v).clamp(0.0, 255.0) as u8
}

/// Block-mean downsampling. Each output pixel is the mean of its
/// `(w / target_w) x (h / target_h)` source block, rounded half-up.
pub fn downsample(img: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage, ImageError> {
    let (w, h) = (img.width, img.height);
    if target_w == 0 || target_h == 0 || w % target_w != 0 || h % target_h != 0 {
        return Err(ImageError::BlockRatio { w, h, tw: target_w, th: target_h });
    }
    let (bw, bh) = (w / target_w, h / target_h);
    let area = (bw * bh) as u64;
    let mut sums = vec![0u64; target_w * target_h];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        let out_row = &mut sums[(y / bh) * target_w..(y / bh + 1) * target_w];
        for (x, &p) in row.iter().enumerate() {
            out_row[x / bw] += p as u64;
        }
    }
    // Integer half-up: floor((2s + area) / (2 area)).
    let pixels = sums.iter().map(|&s| ((2 * s + area) / (2 * area)) as u8).collect();
    Ok(GrayImage { width: target_w, height: target_h, pixels })
}

/// Intensities scaled into `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl NormImage {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(ImageError::Dimensions(width, height));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Back to 8 bits (`v * 255`, half-up).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|&v| to_u8(v * 255.0)).collect(),
        }
    }
}

pub fn normalize(img: &GrayImage) -> NormImage {
    NormImage {
        width: img.width,
        height: img.height,
        values: img.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    }
}
