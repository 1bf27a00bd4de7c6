//! Explicit voxel-grid radiance field with differentiable volume rendering.
//!
//! Density and color parameters live on the vertices of a regular grid that
//! spans an axis-aligned box. A query point is trilinearly interpolated from
//! the eight surrounding vertices, then activated:
//!
//! - density `sigma = softplus(s)`, and zero outside the box;
//! - color `c_k = sigmoid(sum_m Y_m(d) * a_km)` with the four real spherical
//!   harmonics of degree <= 1, so color depends on the view direction `d`.
//!
//! Rays are sampled only over their chord through the box. Sample `i` sits at
//! `t_i` with interval length `delta_i`, weight `w_i = T_i (1 - exp(-sigma_i delta_i))`
//! and transmittance `T_i = exp(-sum_{j<i} sigma_j delta_j)`. The rendered color
//! is `sum_i w_i c_i + T_{N+1} * background`, the depth is the opacity-normalized
//! expected ray distance.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_to_ray, Intrinsics, Pose, Ray, Vec3};
use crate::raster::{DepthMap, Image, Rgb};

pub const SH_COEFFS: usize = 4;
pub const COLOR_PARAMS_PER_VOXEL: usize = 3 * SH_COEFFS;
pub const SH_DEGREE: u32 = 1;

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;

const CHECKPOINT_MAGIC: &[u8; 4] = b"NVRF";
pub const CHECKPOINT_VERSION: u32 = 1;
const ACTIVATION_SOFTPLUS: u8 = 1;
const ACTIVATION_SIGMOID: u8 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field: {0}")]
    Invalid(String),
    #[error("invalid render options: {0}")]
    InvalidOptions(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {rays} rays but {targets} targets")]
    BatchMismatch { rays: usize, targets: usize },
    #[error("non-finite loss at ray {ray_index}")]
    Divergence { ray_index: usize },
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, FieldError> {
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(FieldError::Invalid(format!("bbox min {min:?} must be below max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    /// Parametric chord of `ray` inside the box, clipped to the ray's bounds.
    pub fn clip(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = ray.t_near;
        let mut t1 = ray.t_far;
        for a in 0..3 {
            let d = ray.direction[a];
            let o = ray.origin[a];
            if d.abs() < 1e-15 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((self.min[a] - o) * inv, (self.max[a] - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Real spherical harmonics up to degree 1, in the usual `(Y00, Y1-1, Y10, Y11)` order.
#[inline]
pub fn sh_basis(d: &Vec3) -> [f64; SH_COEFFS] {
    [SH_C0, -SH_C1 * d.y, SH_C1 * d.z, -SH_C1 * d.x]
}

/// Trilinear stencil: eight vertex indices and their weights.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
}

/// Trainable grid of density and view-dependent color parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelRadianceField {
    resolution: [usize; 3],
    bbox: Aabb,
    density: Vec<f64>,
    color: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub color: Rgb,
    pub sigma: f64,
}

impl VoxelRadianceField {
    /// Field with all parameters zero.
    pub fn new(resolution: [usize; 3], bbox: Aabb) -> Result<Self, FieldError> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(FieldError::Invalid(format!("resolution {resolution:?} must be at least 2 per axis")));
        }
        let n = resolution.iter().product::<usize>();
        Ok(Self { resolution, bbox, density: vec![0.0; n], color: vec![0.0; n * COLOR_PARAMS_PER_VOXEL] })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn voxel_count(&self) -> usize {
        self.density.len()
    }

    /// Pre-activation density, one per vertex, x-fastest.
    pub fn density_params(&self) -> &[f64] {
        &self.density
    }

    pub fn density_params_mut(&mut self) -> &mut [f64] {
        &mut self.density
    }

    /// Color coefficients, [`COLOR_PARAMS_PER_VOXEL`] per vertex laid out
    /// channel-major (`[r0..r3, g0..g3, b0..b3]`), vertices x-fastest.
    pub fn color_params(&self) -> &[f64] {
        &self.color
    }

    pub fn color_params_mut(&mut self) -> &mut [f64] {
        &mut self.color
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.bbox.extent();
        let f = |a: usize, n: usize| n as f64 / (self.resolution[a] - 1) as f64;
        Vec3::new(
            self.bbox.min[0] + e[0] * f(0, i),
            self.bbox.min[1] + e[1] * f(1, j),
            self.bbox.min[2] + e[2] * f(2, k),
        )
    }

    /// Smallest vertex spacing.
    pub fn spacing(&self) -> f64 {
        let e = self.bbox.extent();
        (0..3).map(|a| e[a] / (self.resolution[a] - 1) as f64).fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

    fn stencil(&self, x: &Vec3) -> Stencil {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let g = (x[a] - self.bbox.min[a]) / (self.bbox.max[a] - self.bbox.min[a]) * (n - 1) as f64;
            let g = g.clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let (nx, nxy) = (self.resolution[0], self.resolution[0] * self.resolution[1]);
        let i000 = base[0] + nx * base[1] + nxy * base[2];
        let mut idx = [0usize; 8];
        let mut w = [0.0; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            idx[c] = i000 + dx + nx * dy + nxy * dz;
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            w[c] = wx * wy * wz;
        }
        Stencil { idx, w }
    }

    /// Interpolated pre-activation density and color coefficients.
    fn interpolate(&self, st: &Stencil) -> (f64, [f64; COLOR_PARAMS_PER_VOXEL]) {
        let mut s = 0.0;
        let mut a = [0.0; COLOR_PARAMS_PER_VOXEL];
        for c in 0..8 {
            let w = st.w[c];
            let vi = st.idx[c];
            s += w * self.density[vi];
            let base = vi * COLOR_PARAMS_PER_VOXEL;
            for (p, q) in a.iter_mut().zip(&self.color[base..base + COLOR_PARAMS_PER_VOXEL]) {
                *p += w * q;
            }
        }
        (s, a)
    }

    /// Evaluates the field at world point `x` for unit view direction `d`.
    pub fn sample(&self, x: &Vec3, d: &Vec3) -> FieldSample {
        let st = self.stencil(x);
        let (s, a) = self.interpolate(&st);
        let sigma = if self.bbox.contains(x) { softplus(s) } else { 0.0 };
        FieldSample { color: activate_color(&a, &sh_basis(d)), sigma }
    }
}

fn activate_color(a: &[f64; COLOR_PARAMS_PER_VOXEL], sh: &[f64; SH_COEFFS]) -> Rgb {
    let mut c = [0.0; 3];
    for (k, ck) in c.iter_mut().enumerate() {
        let z: f64 = (0..SH_COEFFS).map(|m| sh[m] * a[k * SH_COEFFS + m]).sum();
        *ck = sigmoid(z);
    }
    c
}

/// Free-function form of [`VoxelRadianceField::sample`].
pub fn sample_field(field: &VoxelRadianceField, x: &Vec3, d: &Vec3) -> FieldSample {
    field.sample(x, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub n_samples: usize,
    pub stratified_jitter: bool,
    pub background: Rgb,
    /// Minimum accumulated opacity for the rendered depth to count as valid.
    pub opacity_floor: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { n_samples: 64, stratified_jitter: false, background: [1.0, 1.0, 1.0], opacity_floor: 0.5 }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.n_samples < 2 {
            return Err(FieldError::InvalidOptions("n_samples must be at least 2".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(FieldError::InvalidOptions("background must lie in [0,1]^3".into()));
        }
        if !self.opacity_floor.is_finite() {
            return Err(FieldError::InvalidOptions("opacity_floor must be finite".into()));
        }
        Ok(())
    }

    pub fn without_jitter(mut self) -> Self {
        self.stratified_jitter = false;
        self
    }
}

/// One quadrature sample along a ray, kept for tests and for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub delta: f64,
    pub sigma: f64,
    pub color: Rgb,
    /// Transmittance before this sample.
    pub transmittance: f64,
    pub weight: f64,
    /// d sigma / d s (the softplus derivative), zero outside the box.
    dsigma: f64,
}

impl SampleRecord {
    pub fn new(t: f64, delta: f64, sigma: f64, color: Rgb) -> Self {
        Self { t, delta, sigma, color, transmittance: 0.0, weight: 0.0, dsigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub color: Rgb,
    /// Expected ray distance, normalized by opacity.
    pub depth: f64,
    pub opacity: f64,
    /// Transmittance left after the last sample.
    pub final_transmittance: f64,
    pub samples: Option<Vec<SampleRecord>>,
}

impl RenderResult {
    pub fn valid_depth(&self, opts: &RenderOptions) -> Option<f64> {
        (self.opacity >= opts.opacity_floor && self.opacity > 0.0).then_some(self.depth)
    }
}

/// Alpha-composites samples front to back, filling in their weights and
/// transmittances. With a black background this is exactly the quadrature
/// `sum_i w_i c_i`.
pub fn composite(samples: &mut [SampleRecord], background: Rgb) -> RenderResult {
    let mut t_acc = 1.0;
    let mut color = [0.0; 3];
    let mut opacity = 0.0;
    let mut depth_acc = 0.0;
    for s in samples.iter_mut() {
        let alpha = 1.0 - (-s.sigma * s.delta).exp();
        s.transmittance = t_acc;
        s.weight = t_acc * alpha;
        for c in 0..3 {
            color[c] += s.weight * s.color[c];
        }
        opacity += s.weight;
        depth_acc += s.weight * s.t;
        t_acc *= (-s.sigma * s.delta).exp();
    }
    for c in 0..3 {
        color[c] += t_acc * background[c];
    }
    RenderResult { color, depth: depth_acc / opacity.max(1e-8), opacity, final_transmittance: t_acc, samples: None }
}

fn background_result(opts: &RenderOptions) -> RenderResult {
    RenderResult { color: opts.background, depth: 0.0, opacity: 0.0, final_transmittance: 1.0, samples: Some(Vec::new()) }
}

/// Marches `ray` through the field. `offsets` yields the stratified position
/// of each sample inside its bin, in [0, 1).
fn march(
    field: &VoxelRadianceField,
    ray: &Ray,
    opts: &RenderOptions,
    mut offsets: impl FnMut() -> f64,
    samples: &mut Vec<SampleRecord>,
) -> RenderResult {
    samples.clear();
    let Some((t0, t1)) = field.bbox.clip(ray) else {
        return background_result(opts);
    };
    let n = opts.n_samples;
    let bin = (t1 - t0) / n as f64;
    let sh = sh_basis(&ray.direction);
    let ts: Vec<f64> = (0..n).map(|i| t0 + (i as f64 + offsets()) * bin).collect();
    for i in 0..n {
        let t = ts[i];
        let delta = if i + 1 < n { ts[i + 1] - t } else { bin };
        let x = ray.at(t);
        let st = field.stencil(&x);
        let (s, a) = field.interpolate(&st);
        let inside = field.bbox.contains(&x);
        let (sigma, dsigma) = if inside { (softplus(s), sigmoid(s)) } else { (0.0, 0.0) };
        samples.push(SampleRecord {
            t,
            delta,
            sigma,
            color: activate_color(&a, &sh),
            transmittance: 0.0,
            weight: 0.0,
            dsigma,
        });
    }
    composite(samples, opts.background)
}

/// Renders one ray with bin-centered samples. Per-sample records are attached.
pub fn render_ray(field: &VoxelRadianceField, ray: &Ray, opts: &RenderOptions) -> RenderResult {
    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut r = march(field, ray, opts, || 0.5, &mut samples);
    r.samples = Some(samples);
    r
}

/// Renders one ray; if `opts.stratified_jitter` is set, sample offsets are drawn from `rng`.
pub fn render_ray_with<R: Rng + ?Sized>(
    field: &VoxelRadianceField,
    ray: &Ray,
    opts: &RenderOptions,
    rng: &mut R,
) -> RenderResult {
    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut r = if opts.stratified_jitter {
        march(field, ray, opts, || rng.gen::<f64>(), &mut samples)
    } else {
        march(field, ray, opts, || 0.5, &mut samples)
    };
    r.samples = Some(samples);
    r
}

/// Full-frame render output.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: Image,
    pub depth: DepthMap,
    pub opacity: Vec<f64>,
}

/// Renders every pixel of a view. With jitter enabled, `seed` fixes the sample offsets.
pub fn render_image(
    field: &VoxelRadianceField,
    pose: &Pose,
    k: &Intrinsics,
    opts: &RenderOptions,
    seed: u64,
) -> RenderedImage {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (k.width, k.height);
    let mut rgb = Image::new(w, h, [0.0; 3]);
    let mut depth = DepthMap::new(w, h);
    let mut opacity = vec![0.0; k.pixel_count()];
    let mut samples = Vec::with_capacity(opts.n_samples);
    for v in 0..h {
        for u in 0..w {
            let ray = pixel_to_ray(pose, k, u as f64, v as f64);
            let r = if opts.stratified_jitter {
                march(field, &ray, opts, || rng.gen::<f64>(), &mut samples)
            } else {
                march(field, &ray, opts, || 0.5, &mut samples)
            };
            rgb.set(u, v, r.color);
            depth.set(u, v, r.valid_depth(opts));
            opacity[(v * w + u) as usize] = r.opacity;
        }
    }
    RenderedImage { rgb, depth, opacity }
}

/// Renders only the listed pixels (no jitter), returning one result per pixel.
pub fn render_pixels(
    field: &VoxelRadianceField,
    pose: &Pose,
    k: &Intrinsics,
    pixels: &[(u32, u32)],
    opts: &RenderOptions,
) -> Vec<RenderResult> {
    let mut samples = Vec::with_capacity(opts.n_samples);
    pixels
        .iter()
        .map(|&(u, v)| march(field, &pixel_to_ray(pose, k, u as f64, v as f64), opts, || 0.5, &mut samples))
        .collect()
}

/// Dense gradient buffers shaped like the field parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(field: &VoxelRadianceField) -> Self {
        Self { density: vec![0.0; field.density.len()], color: vec![0.0; field.color.len()] }
    }

    pub fn clear(&mut self) {
        self.density.fill(0.0);
        self.color.fill(0.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.density.iter().chain(&self.color).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Adds `scale * d/dparams sum_r ||C_hat(r) - C(r)||^2` into `grads` and returns
/// the unscaled sum of per-ray squared errors. Sample offsets are drawn from
/// `rng` when jitter is enabled.
pub fn accumulate_gradients<R: Rng + ?Sized>(
    field: &VoxelRadianceField,
    rays: &[Ray],
    targets: &[Rgb],
    opts: &RenderOptions,
    scale: f64,
    grads: &mut Gradients,
    rng: &mut R,
) -> Result<f64, FieldError> {
    if rays.len() != targets.len() {
        return Err(FieldError::BatchMismatch { rays: rays.len(), targets: targets.len() });
    }
    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut total = 0.0;
    for (ray_index, (ray, target)) in rays.iter().zip(targets).enumerate() {
        let r = if opts.stratified_jitter {
            march(field, ray, opts, || rng.gen::<f64>(), &mut samples)
        } else {
            march(field, ray, opts, || 0.5, &mut samples)
        };
        let diff = [r.color[0] - target[0], r.color[1] - target[1], r.color[2] - target[2]];
        let loss = diff.iter().map(|d| d * d).sum::<f64>();
        if !loss.is_finite() {
            return Err(FieldError::Divergence { ray_index });
        }
        total += loss;
        let g = diff.map(|d| 2.0 * scale * d);
        backward_ray(field, ray, &samples, r.final_transmittance, opts.background, g, grads);
    }
    Ok(total)
}

/// Backpropagates `g = dL/dC_hat` through one composited ray.
fn backward_ray(
    field: &VoxelRadianceField,
    ray: &Ray,
    samples: &[SampleRecord],
    final_transmittance: f64,
    background: Rgb,
    g: Rgb,
    grads: &mut Gradients,
) {
    let sh = sh_basis(&ray.direction);
    // Color seen behind the current sample: sum_{j>i} w_j c_j + T_{N+1} bg.
    let mut behind = background.map(|b| final_transmittance * b);
    for s in samples.iter().rev() {
        let t_next = s.transmittance - s.weight;
        let g_dot_c: f64 = (0..3).map(|k| g[k] * s.color[k]).sum();
        let g_dot_behind: f64 = (0..3).map(|k| g[k] * behind[k]).sum();
        let d_sigma = s.delta * (t_next * g_dot_c - g_dot_behind);
        let d_s = d_sigma * s.dsigma;

        let mut d_a = [0.0; COLOR_PARAMS_PER_VOXEL];
        for k in 0..3 {
            let dz = s.weight * g[k] * s.color[k] * (1.0 - s.color[k]);
            for m in 0..SH_COEFFS {
                d_a[k * SH_COEFFS + m] = dz * sh[m];
            }
        }

        let st = field.stencil(&ray.at(s.t));
        for c in 0..8 {
            let w = st.w[c];
            if w == 0.0 {
                continue;
            }
            let vi = st.idx[c];
            grads.density[vi] += w * d_s;
            let base = vi * COLOR_PARAMS_PER_VOXEL;
            for (dst, src) in grads.color[base..base + COLOR_PARAMS_PER_VOXEL].iter_mut().zip(&d_a) {
                *dst += w * src;
            }
        }
        for k in 0..3 {
            behind[k] += s.weight * s.color[k];
        }
    }
}

/// Mean squared RGB error over the batch (summed over channels) and its exact
/// gradient with respect to every field parameter. Uses bin-centered samples.
pub fn loss_and_gradients(
    field: &VoxelRadianceField,
    rays: &[Ray],
    targets: &[Rgb],
    opts: &RenderOptions,
) -> Result<(f64, Gradients), FieldError> {
    if rays.is_empty() {
        return Err(FieldError::EmptyBatch);
    }
    let mut grads = Gradients::zeros_like(field);
    let opts = opts.without_jitter();
    let mut unused = rand::rngs::mock::StepRng::new(0, 0);
    let n = rays.len() as f64;
    let total = accumulate_gradients(field, rays, targets, &opts, 1.0 / n, &mut grads, &mut unused)?;
    Ok((total / n, grads))
}

/// Mean squared error without gradients.
pub fn batch_loss(field: &VoxelRadianceField, rays: &[Ray], targets: &[Rgb], opts: &RenderOptions) -> Result<f64, FieldError> {
    if rays.is_empty() {
        return Err(FieldError::EmptyBatch);
    }
    if rays.len() != targets.len() {
        return Err(FieldError::BatchMismatch { rays: rays.len(), targets: targets.len() });
    }
    let opts = opts.without_jitter();
    let mut samples = Vec::with_capacity(opts.n_samples);
    let mut total = 0.0;
    for (ray_index, (ray, target)) in rays.iter().zip(targets).enumerate() {
        let r = march(field, ray, &opts, || 0.5, &mut samples);
        let l: f64 = (0..3).map(|k| (r.color[k] - target[k]).powi(2)).sum();
        if !l.is_finite() {
            return Err(FieldError::Divergence { ray_index });
        }
        total += l;
    }
    Ok(total / rays.len() as f64)
}

impl VoxelRadianceField {
    /// Writes the little-endian checkpoint format:
    ///
    /// ```text
    /// magic "NVRF" | version u32 | nx ny nz u32 | bbox min xyz, max xyz f64
    /// | sh_degree u32 | density activation u8 (1 = softplus)
    /// | color activation u8 (1 = sigmoid) | density params f64 * nx*ny*nz
    /// | color params f64 * nx*ny*nz*12
    /// ```
    ///
    /// Vertices are stored x-fastest; each vertex's 12 color coefficients are
    /// channel-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.density.len() + self.color.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for &n in &self.resolution {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in self.bbox.min.iter().chain(&self.bbox.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&SH_DEGREE.to_le_bytes());
        out.push(ACTIVATION_SOFTPLUS);
        out.push(ACTIVATION_SIGMOID);
        for v in self.density.iter().chain(&self.color) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FieldError> {
        let mut r = bytes;
        let bad = |m: &str| FieldError::BadCheckpoint(m.to_string());
        let mut take = |n: usize| -> Result<&[u8], FieldError> {
            if r.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(FieldError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let mut resolution = [0usize; 3];
        for n in &mut resolution {
            *n = u32_at(take(4)?) as usize;
        }
        let mut corners = [0.0; 6];
        for c in &mut corners {
            *c = f64_at(take(8)?);
        }
        if u32_at(take(4)?) != SH_DEGREE {
            return Err(bad("unsupported SH degree"));
        }
        let act = take(2)?;
        if act != [ACTIVATION_SOFTPLUS, ACTIVATION_SIGMOID] {
            return Err(bad("unsupported activations"));
        }
        let bbox = Aabb::new([corners[0], corners[1], corners[2]], [corners[3], corners[4], corners[5]])?;
        let mut field = Self::new(resolution, bbox)?;
        let n = field.density.len();
        let expected = 8 * n * (1 + COLOR_PARAMS_PER_VOXEL);
        if r.len() != expected {
            return Err(FieldError::BadCheckpoint(format!("expected {expected} parameter bytes, found {}", r.len())));
        }
        let (d, c) = r.split_at(8 * n);
        for (dst, b) in field.density.iter_mut().zip(d.chunks_exact(8)) {
            *dst = f64_at(b);
        }
        for (dst, b) in field.color.iter_mut().zip(c.chunks_exact(8)) {
            *dst = f64_at(b);
        }
        if !field.is_finite() {
            return Err(bad("non-finite parameters"));
        }
        Ok(field)
    }

    /// Saves via a temporary file and rename, so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        let io = |source| FieldError::Io { path: path.display().to_string(), source };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let io = |source| FieldError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Self::from_bytes(&bytes)
    }
}
