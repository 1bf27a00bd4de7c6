//! Plain in-memory rasters: RGB images, depth maps and boolean masks.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rgb = [f64; 3];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image codec error on {path}: {source}")]
    Codec { path: String, source: image::ImageError },
    #[error("size mismatch: expected {expected:?}, got {actual:?}")]
    SizeMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("bad depth file {path}: {reason}")]
    BadDepth { path: String, reason: String },
}

/// Row-major RGB image with channel values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        Self { width, height, pixels: vec![fill; width as usize * height as usize] }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize, "pixel count does not match size");
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn get(&self, u: u32, v: u32) -> Rgb {
        self.pixels[self.index(u, v)]
    }

    pub fn set(&mut self, u: u32, v: u32, c: Rgb) {
        let i = self.index(u, v);
        self.pixels[i] = c;
    }

    /// Bilinear lookup at continuous image coordinates, where pixel `(u, v)`
    /// is centered at `(u + 0.5, v + 0.5)`. Returns `None` unless all four
    /// taps are inside the image, except that coordinates within the outer
    /// half-pixel border clamp to the edge row/column.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Rgb> {
        if !(x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64) {
            return None;
        }
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + ax * (p10[c] - p00[c]);
            let bottom = p01[c] + ax * (p11[c] - p01[c]);
            out[c] = top + ay * (bottom - top);
        }
        Some(out)
    }

    /// Rounds every channel to the nearest 8-bit level, as a save/load cycle would.
    pub fn quantized(&self) -> Self {
        let pixels = self.pixels.iter().map(|p| p.map(|c| to_u8(c) as f64 / 255.0)).collect();
        Self { width: self.width, height: self.height, pixels }
    }

    /// 2x2 box filter; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::new(w, h, [0.0; 3]);
        for v in 0..h {
            for u in 0..w {
                let mut acc = [0.0; 3];
                for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let p = self.get(2 * u + du, 2 * v + dv);
                    for c in 0..3 {
                        acc[c] += 0.25 * p[c];
                    }
                }
                out.set(u, v, acc);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut buf = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            buf.extend(p.iter().map(|&c| to_u8(c)));
        }
        image::RgbImage::from_raw(self.width, self.height, buf).expect("buffer length matches size")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let pixels = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
        Self { width: img.width(), height: img.height(), pixels }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|source| RasterError::Codec {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| match source {
            image::ImageError::IoError(e) => RasterError::Io { path: path.display().to_string(), source: e },
            source => RasterError::Codec { path: path.display().to_string(), source },
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Encodes as an in-memory PNG.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png).expect("png encoding into memory");
        out.into_inner()
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|source| RasterError::Codec { path: "<memory>".into(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.size(), other.size());
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
            .sum();
        sum / (3 * self.pixels.len()) as f64
    }
}

pub fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel boolean flags, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, fill: bool) -> Self {
        Self { width, height, bits: vec![fill; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let i = v as usize * self.width as usize + u as usize;
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// Black/white visualization.
    pub fn to_image(&self) -> Image {
        let pixels = self.bits.iter().map(|&b| if b { [1.0; 3] } else { [0.0; 3] }).collect();
        Image::from_pixels(self.width, self.height, pixels)
    }
}

/// Ray-distance depth per pixel; `None` where the depth is not trustworthy.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<Option<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthHeader {
    format: String,
    version: u32,
    width: u32,
    height: u32,
    dtype: String,
    semantics: String,
}

const DEPTH_FORMAT: &str = "nearview-depth";
const DEPTH_VERSION: u32 = 1;

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, values: vec![None; width as usize * height as usize] }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<Option<f64>>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: Option<f64>) {
        let i = v as usize * self.width as usize + u as usize;
        self.values[i] = d;
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::from_bits(self.width, self.height, self.values.iter().map(Option::is_some).collect())
    }

    /// Writes `path` as raw little-endian f32 (NaN = invalid) and
    /// `path.json` as the header sidecar.
    pub fn save_raw(&self, path: &Path) -> Result<(), RasterError> {
        let io = |source| RasterError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for d in &self.values {
            bytes.extend_from_slice(&d.map_or(f32::NAN, |d| d as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(io)?;
        let header = DepthHeader {
            format: DEPTH_FORMAT.into(),
            version: DEPTH_VERSION,
            width: self.width,
            height: self.height,
            dtype: "f32le".into(),
            semantics: "ray distance, row-major, NaN marks invalid".into(),
        };
        let mut f = fs::File::create(sidecar(path)).map_err(io)?;
        f.write_all(serde_json::to_string_pretty(&header).expect("header serializes").as_bytes()).map_err(io)
    }

    pub fn load_raw(path: &Path) -> Result<Self, RasterError> {
        let io = |source| RasterError::Io { path: path.display().to_string(), source };
        let bad = |reason: String| RasterError::BadDepth { path: path.display().to_string(), reason };
        let header: DepthHeader =
            serde_json::from_slice(&fs::read(sidecar(path)).map_err(io)?).map_err(|e| bad(e.to_string()))?;
        if header.format != DEPTH_FORMAT || header.version != DEPTH_VERSION || header.dtype != "f32le" {
            return Err(bad(format!("unsupported header {} v{}", header.format, header.version)));
        }
        let bytes = fs::read(path).map_err(io)?;
        let n = header.width as usize * header.height as usize;
        if bytes.len() != n * 4 {
            return Err(bad(format!("expected {} bytes, found {}", n * 4, bytes.len())));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| {
                let d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                (!d.is_nan()).then_some(d as f64)
            })
            .collect();
        Ok(Self { width: header.width, height: header.height, values })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let pixels = (0..12).map(|i| [i as f64 / 12.0, 0.5, 1.0 - i as f64 / 12.0]).collect();
        let img = Image::from_pixels(4, 3, pixels);
        for v in 0..3 {
            for u in 0..4 {
                assert_eq!(img.sample_bilinear(u as f64 + 0.5, v as f64 + 0.5), Some(img.get(u, v)));
            }
        }
        let mid = img.sample_bilinear(1.0, 0.5).unwrap();
        assert!((mid[0] - 0.5 * (img.get(0, 0)[0] + img.get(1, 0)[0])).abs() < 1e-15);
        assert_eq!(img.sample_bilinear(-0.1, 1.0), None);
        assert_eq!(img.sample_bilinear(4.01, 1.0), None);
    }

    #[test]
    fn png_and_depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_pixels(3, 2, (0..6).map(|i| [i as f64 / 5.0, 0.25, 0.75]).collect()).quantized();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);

        let depth = DepthMap::from_values(3, 2, vec![Some(1.5), None, Some(2.25), Some(0.125), None, Some(7.0)]);
        let d = dir.path().join("d.raw");
        depth.save_raw(&d).unwrap();
        assert_eq!(DepthMap::load_raw(&d).unwrap(), depth);
        fs::write(&d, [0u8; 5]).unwrap();
        assert!(matches!(DepthMap::load_raw(&d), Err(RasterError::BadDepth { .. })));
    }
}
