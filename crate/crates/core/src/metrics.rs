//! Image quality metrics and the evaluation harness.
//!
//! PSNR uses a peak of 1 over every pixel and channel. SSIM is computed on luma
//! (`0.299 R + 0.587 G + 0.114 B`) with an 11x11 Gaussian window (sigma 1.5),
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, averaged over the window
//! positions that fit entirely inside the image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Split};
use crate::field::{render_image, RenderOptions, VoxelRadianceField};
use crate::raster::Image;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((u32, u32)),
}

fn same_shape(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.size() != b.size() {
        return Err(MetricsError::ShapeMismatch { a: a.size(), b: b.size() });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels().len()) as f64)
}

/// `10 log10(1 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn luma(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.size()));
    }
    let (x, y) = (luma(a), luma(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let mxx = filter_valid(&prod(&x, &x), w, h, &k);
    let myy = filter_valid(&prod(&y, &y), w, h, &k);
    let mxy = filter_valid(&prod(&x, &y), w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Serializes an infinite PSNR as the string `"inf"`.
mod db {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Wire::deserialize(d)? {
            Wire::Num(v) => Ok(v),
            Wire::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Wire::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub frame: usize,
    #[serde(with = "db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub views: Vec<ViewScore>,
    /// `None` for an empty split.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub render: RenderOptions,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,ssim\n");
        for v in &self.views {
            out.push_str(&format!("{},{},{}\n", v.frame, v.psnr, v.ssim));
        }
        out
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn score_views(split: Split, scores: Vec<ViewScore>, render: RenderOptions, seed: u64) -> EvalReport {
    EvalReport {
        split,
        mean_psnr: mean(scores.iter().map(|v| v.psnr)),
        mean_ssim: mean(scores.iter().map(|v| v.ssim)),
        views: scores,
        render,
        seed,
    }
}

/// Renders `frames` of `ds` and scores them against their stored images.
pub fn evaluate_frames(
    field: &VoxelRadianceField,
    ds: &Dataset,
    split: Split,
    frames: &[usize],
    opts: &RenderOptions,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    let k = ds.intrinsics();
    let mut scores = Vec::with_capacity(frames.len());
    for &frame in frames {
        let img = render_image(field, ds.pose(frame), k, opts, seed).rgb;
        let gt = &ds.images[frame];
        scores.push(ViewScore { frame, psnr: psnr(&img, gt)?, ssim: ssim(&img, gt)? });
    }
    Ok(score_views(split, scores, *opts, seed))
}

pub fn evaluate(
    field: &VoxelRadianceField,
    ds: &Dataset,
    split: Split,
    opts: &RenderOptions,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    evaluate_frames(field, ds, split, &ds.indices(split), opts, seed)
}
