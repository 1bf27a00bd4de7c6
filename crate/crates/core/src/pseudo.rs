//! Close-up pose generation and warped pseudo-labels.
//!
//! A close-up pose is made from a training pose `[R_n | t_n]` and an anchor
//! surface point `X_a` lifted from the rendered depth of one of its pixels:
//!
//! - position `t' = ((lambda - 1) X_a + t_n) / lambda`, so the new camera is
//!   `lambda` times closer to the anchor;
//! - orientation: the Euler angles of `R_n`, each shifted by an offset drawn
//!   from `(-angle_bound, angle_bound)`.
//!
//! The label for a target pose combines two warps of the training images.
//! The backward warp lifts target pixels with the target's rendered depth and
//! samples one source image (`I'`). The forward warp lifts every pixel of every
//! training view with that view's depth and splats it into the target with a
//! z-buffer (`I*`). Pixels where both are defined and agree within the RGB
//! threshold form the consistency mask.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::field::{render_image, render_pixels, render_ray, RenderOptions, VoxelRadianceField};
use crate::geometry::{
    euler_from_rotation, pixel_to_ray, point_from_depth, project_point, rotation_from_euler, EulerAngles,
    Intrinsics, Pose, Ray, Vec3,
};
use crate::raster::{DepthMap, Image, Mask, RasterError, Rgb};

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("scene not ready: no anchor pixel reached opacity {min_opacity} after {attempts} attempts")]
    SceneNotReady { attempts: usize, min_opacity: f64 },
    #[error("label rejected: valid fraction {valid_fraction:.4} below {min_fraction}")]
    LabelRejected { valid_fraction: f64, min_fraction: f64 },
    #[error("no training view overlaps the requested pose")]
    NoOverlap,
    #[error("invalid close-up config: {0}")]
    InvalidConfig(String),
    #[error("frame {0} is not a training view")]
    NotATrainingView(usize),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplatMode {
    /// One target pixel per source pixel.
    Nearest,
    /// Every target pixel center inside the source pixel's projected footprint.
    Footprint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloseupConfig {
    /// Magnification interval for `lambda`.
    pub lambda_range: (f64, f64),
    /// Bound on each Euler-angle offset, radians.
    pub angle_bound: f64,
    /// Max per-channel RGB difference for the consistency mask.
    pub rgb_match_threshold: f64,
    pub min_anchor_opacity: f64,
    pub min_mask_fraction: f64,
    /// Pixel draws before pose generation gives up.
    pub max_anchor_attempts: usize,
    pub splat: SplatMode,
    /// Training-view pixels whose depth differs from a 4-neighbor by more
    /// than this fraction are left out of the forward warp. Expected depth
    /// blends foreground and background at silhouettes, and such in-between
    /// points would otherwise win the z-buffer.
    pub depth_edge_threshold: Option<f64>,
}

impl Default for CloseupConfig {
    fn default() -> Self {
        Self {
            lambda_range: (2.0, 8.0),
            angle_bound: std::f64::consts::FRAC_PI_4,
            rgb_match_threshold: 0.05,
            min_anchor_opacity: 0.5,
            min_mask_fraction: 0.05,
            max_anchor_attempts: 256,
            splat: SplatMode::Footprint,
            depth_edge_threshold: Some(0.05),
        }
    }
}

impl CloseupConfig {
    pub fn validate(&self) -> Result<(), PseudoError> {
        let (lo, hi) = self.lambda_range;
        if !(lo >= 2.0 && lo < hi && hi.is_finite()) {
            return Err(PseudoError::InvalidConfig(format!("lambda range ({lo}, {hi}) must satisfy 2 <= min < max")));
        }
        if !(self.angle_bound > 0.0 && self.angle_bound <= std::f64::consts::PI) {
            return Err(PseudoError::InvalidConfig("angle_bound must lie in (0, pi]".into()));
        }
        if !(self.rgb_match_threshold >= 0.0) {
            return Err(PseudoError::InvalidConfig("rgb_match_threshold must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.min_mask_fraction) {
            return Err(PseudoError::InvalidConfig("min_mask_fraction must lie in [0, 1]".into()));
        }
        if self.depth_edge_threshold.is_some_and(|t| !(t > 0.0)) {
            return Err(PseudoError::InvalidConfig("depth_edge_threshold must be positive".into()));
        }
        if self.max_anchor_attempts == 0 {
            return Err(PseudoError::InvalidConfig("max_anchor_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Pose moved `lambda` times closer to `anchor`, with Euler angles offset by `delta`.
pub fn closeup_pose(source: &Pose, anchor: &Vec3, lambda: f64, delta: &EulerAngles) -> Pose {
    let t = ((lambda - 1.0) * anchor + source.translation()) / lambda;
    let euler = euler_from_rotation(source.rotation()).angles + *delta;
    Pose::new(rotation_from_euler(&euler), t).expect("Euler composition yields a rotation")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseupPose {
    pub pose: Pose,
    /// Dataset frame index of the training view that seeded the pose.
    pub source_index: usize,
    pub anchor_pixel: (u32, u32),
    pub anchor_point: [f64; 3],
    pub lambda: f64,
    pub delta: EulerAngles,
}

/// Draws a random close-up pose from the training views of `ds`, anchored on
/// a pixel whose rendered opacity reaches `config.min_anchor_opacity`.
pub fn generate_closeup_pose<R: Rng + ?Sized>(
    field: &VoxelRadianceField,
    ds: &Dataset,
    config: &CloseupConfig,
    opts: &RenderOptions,
    rng: &mut R,
) -> Result<CloseupPose, PseudoError> {
    let train = ds.train_indices();
    if train.is_empty() {
        return Err(PseudoError::SceneNotReady { attempts: 0, min_opacity: config.min_anchor_opacity });
    }
    let k = ds.intrinsics();
    let opts = opts.without_jitter();
    // Rejection sampling: uniform over valid pixels of a uniformly chosen view.
    let per_view = 32.min(config.max_anchor_attempts);
    let mut attempts = 0;
    while attempts < config.max_anchor_attempts {
        let source_index = train[rng.gen_range(0..train.len())];
        let pose = ds.pose(source_index);
        for _ in 0..per_view {
            attempts += 1;
            let (u, v) = (rng.gen_range(0..k.width), rng.gen_range(0..k.height));
            let ray = pixel_to_ray(pose, k, u as f64, v as f64);
            let r = render_ray(field, &ray, &opts);
            if r.opacity >= config.min_anchor_opacity && r.opacity > 0.0 && r.depth > 0.0 {
                let anchor = ray.at(r.depth);
                let lambda = rng.gen_range(config.lambda_range.0..config.lambda_range.1);
                let b = config.angle_bound;
                let delta = EulerAngles::new(rng.gen_range(-b..b), rng.gen_range(-b..b), rng.gen_range(-b..b));
                return Ok(CloseupPose {
                    pose: closeup_pose(pose, &anchor, lambda, &delta),
                    source_index,
                    anchor_pixel: (u, v),
                    anchor_point: [anchor.x, anchor.y, anchor.z],
                    lambda,
                    delta,
                });
            }
            if attempts >= config.max_anchor_attempts {
                break;
            }
        }
    }
    Err(PseudoError::SceneNotReady { attempts, min_opacity: config.min_anchor_opacity })
}

/// Per-pixel backward warp: lift target pixel `(u, v)` at ray distance `depth`
/// and sample the source image where it projects.
pub fn backward_warp_pixel(
    target_pose: &Pose,
    u: u32,
    v: u32,
    depth: f64,
    source_image: &Image,
    source_pose: &Pose,
    k: &Intrinsics,
) -> Option<Rgb> {
    let x = point_from_depth(target_pose, k, u as f64, v as f64, depth).ok()?;
    let p = project_point(source_pose, k, &x).ok()?;
    source_image.sample_bilinear(p.u, p.v)
}

pub fn backward_warp(
    target_pose: &Pose,
    target_depth: &DepthMap,
    source_image: &Image,
    source_pose: &Pose,
    k: &Intrinsics,
) -> (Image, Mask) {
    let (w, h) = (target_depth.width(), target_depth.height());
    let mut img = Image::new(w, h, [0.0; 3]);
    let mut defined = Mask::new(w, h, false);
    for v in 0..h {
        for u in 0..w {
            let Some(d) = target_depth.get(u, v) else { continue };
            if let Some(c) = backward_warp_pixel(target_pose, u, v, d, source_image, source_pose, k) {
                img.set(u, v, c);
                defined.set(u, v, true);
            }
        }
    }
    (img, defined)
}

/// One training view prepared for forward warping: every valid pixel lifted
/// to world space once.
#[derive(Clone, Debug)]
pub struct WarpSource {
    pub frame: usize,
    pub pose: Pose,
    pub depth: DepthMap,
    /// (pixel index, world point, camera-frame z) per valid pixel.
    points: Vec<(usize, Vec3, f64)>,
}

impl WarpSource {
    pub fn new(frame: usize, pose: Pose, depth: DepthMap, k: &Intrinsics, edge_threshold: Option<f64>) -> Self {
        let mut points = Vec::new();
        let (w, h) = (depth.width(), depth.height());
        let on_edge = |u: u32, v: u32, d: f64, t: f64| {
            let neighbors = [(u.wrapping_sub(1), v), (u + 1, v), (u, v.wrapping_sub(1)), (u, v + 1)];
            neighbors
                .into_iter()
                .filter(|&(x, y)| x < w && y < h)
                .filter_map(|(x, y)| depth.get(x, y))
                .any(|n| (n - d).abs() > t * d)
        };
        for v in 0..h {
            for u in 0..w {
                if let Some(d) = depth.get(u, v) {
                    if edge_threshold.is_some_and(|t| on_edge(u, v, d, t)) {
                        continue;
                    }
                    if let Ok(x) = point_from_depth(&pose, k, u as f64, v as f64, d) {
                        let z = pose.world_to_camera(&x).z;
                        points.push(((v * depth.width() + u) as usize, x, z));
                    }
                }
            }
        }
        Self { frame, pose, depth, points }
    }

    pub fn valid_pixels(&self) -> usize {
        self.points.len()
    }
}

/// Depth maps of every training view, lifted for warping.
#[derive(Clone, Debug)]
pub struct TrainingDepths {
    pub views: Vec<WarpSource>,
}

impl TrainingDepths {
    /// Renders the depth of every training view from `field`.
    pub fn render(field: &VoxelRadianceField, ds: &Dataset, opts: &RenderOptions, config: &CloseupConfig) -> Self {
        let opts = opts.without_jitter();
        let k = ds.intrinsics();
        let views = ds
            .train_indices()
            .into_iter()
            .map(|i| {
                let depth = render_image(field, ds.pose(i), k, &opts, 0).depth;
                WarpSource::new(i, *ds.pose(i), depth, k, config.depth_edge_threshold)
            })
            .collect();
        Self { views }
    }

    /// Uses externally supplied depth maps (e.g. oracle depth), one per training frame.
    pub fn from_maps(ds: &Dataset, maps: Vec<(usize, DepthMap)>, config: &CloseupConfig) -> Self {
        let k = ds.intrinsics();
        let edge = config.depth_edge_threshold;
        Self { views: maps.into_iter().map(|(i, d)| WarpSource::new(i, *ds.pose(i), d, k, edge)).collect() }
    }

    pub fn view_for_frame(&self, frame: usize) -> Option<&WarpSource> {
        self.views.iter().find(|v| v.frame == frame)
    }
}

/// Z-buffered forward warp of all sources into a target view.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub image: Image,
    /// Target-view ray distance of the retained candidate (`INFINITY` if none).
    pub zbuffer: Vec<f64>,
    pub defined: Mask,
}

const ZBUFFER_TIE: f64 = 1e-6;
const MAX_FOOTPRINT: f64 = 16.0;

/// Shared splatting loop. `slot_of[pixel]` maps a target pixel to an output
/// slot (`usize::MAX` = not wanted); results land in `colors`/`depths` by slot.
fn splat_into(
    target_pose: &Pose,
    sources: &[(&WarpSource, &Image)],
    k: &Intrinsics,
    mode: SplatMode,
    slot_of: &[usize],
    colors: &mut [Rgb],
    depths: &mut [f64],
) {
    let (w, h) = (k.width as i64, k.height as i64);
    let center = target_pose.center();
    for (src, img) in sources {
        let src_w = img.width() as usize;
        for &(pix, x, z_src) in &src.points {
            let Ok(p) = project_point(target_pose, k, &x) else { continue };
            let size = match mode {
                SplatMode::Nearest => 0.0,
                SplatMode::Footprint => (z_src / p.z).min(MAX_FOOTPRINT),
            };
            let half = 0.5 * size;
            let (nu, nv) = (p.u.floor() as i64, p.v.floor() as i64);
            let u0 = ((p.u - half - 0.5).ceil() as i64).min(nu);
            let u1 = ((p.u + half - 0.5).floor() as i64).max(nu);
            let v0 = ((p.v - half - 0.5).ceil() as i64).min(nv);
            let v1 = ((p.v + half - 0.5).floor() as i64).max(nv);
            if u1 < 0 || v1 < 0 || u0 >= w || v0 >= h {
                continue;
            }
            let dist = (x - center).norm();
            let color = img.pixels()[pix];
            let _ = src_w;
            for tv in v0.max(0)..=v1.min(h - 1) {
                for tu in u0.max(0)..=u1.min(w - 1) {
                    let slot = slot_of[(tv * w + tu) as usize];
                    if slot == usize::MAX {
                        continue;
                    }
                    if dist < depths[slot] - ZBUFFER_TIE {
                        depths[slot] = dist;
                        colors[slot] = color;
                    }
                }
            }
        }
    }
}

/// Forward-warps every source into the target, keeping the candidate with
/// the smallest target-view ray distance at each pixel.
pub fn forward_warp_aggregate(
    target_pose: &Pose,
    sources: &[(&WarpSource, &Image)],
    k: &Intrinsics,
    mode: SplatMode,
) -> Aggregate {
    let n = k.pixel_count();
    let slot_of: Vec<usize> = (0..n).collect();
    let mut colors = vec![[0.0; 3]; n];
    let mut depths = vec![f64::INFINITY; n];
    splat_into(target_pose, sources, k, mode, &slot_of, &mut colors, &mut depths);
    let defined = Mask::from_bits(k.width, k.height, depths.iter().map(|d| d.is_finite()).collect());
    Aggregate { image: Image::from_pixels(k.width, k.height, colors), zbuffer: depths, defined }
}

#[inline]
pub fn colors_match(a: &Rgb, b: &Rgb, threshold: f64) -> bool {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max) < threshold
}

/// `M = defined' & defined* & max_c |I' - I*| < threshold`.
pub fn consistency_mask(warped: &Image, warped_defined: &Mask, aggregate: &Image, aggregate_defined: &Mask, threshold: f64) -> Mask {
    assert_eq!(warped.size(), aggregate.size());
    let bits = warped
        .pixels()
        .iter()
        .zip(aggregate.pixels())
        .zip(warped_defined.bits().iter().zip(aggregate_defined.bits()))
        .map(|((a, b), (&da, &db))| da && db && colors_match(a, b, threshold))
        .collect();
    Mask::from_bits(warped.width(), warped.height(), bits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub target_pose: Pose,
    pub source_index: usize,
    /// Rendered target-view depth used for the backward warp.
    pub target_depth: DepthMap,
    pub image: Image,
    pub defined: Mask,
    pub aggregate: Aggregate,
    pub mask: Mask,
    pub valid_fraction: f64,
}

impl PseudoLabel {
    /// Masked label: `I'` where the mask holds, black elsewhere.
    pub fn masked_image(&self) -> Image {
        let pixels = self
            .image
            .pixels()
            .iter()
            .zip(self.mask.bits())
            .map(|(p, &m)| if m { *p } else { [0.0; 3] })
            .collect();
        Image::from_pixels(self.image.width(), self.image.height(), pixels)
    }

    /// Masked pixels as `(u, v, color)`.
    pub fn supervised_pixels(&self) -> Vec<(u32, u32, Rgb)> {
        let w = self.image.width();
        self.mask
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| ((i as u32) % w, (i as u32) / w, self.image.pixels()[i]))
            .collect()
    }

    /// Writes `label.png`, `aggregate.png`, `mask.png`, `final.png` and `label.json` into `dir`.
    pub fn dump(&self, dir: &Path, lambda: Option<f64>) -> Result<(), PseudoError> {
        std::fs::create_dir_all(dir)?;
        self.image.save_png(&dir.join("label.png"))?;
        self.aggregate.image.save_png(&dir.join("aggregate.png"))?;
        self.mask.to_image().save_png(&dir.join("mask.png"))?;
        self.masked_image().save_png(&dir.join("final.png"))?;
        let meta = LabelSidecar {
            pose: self.target_pose,
            lambda,
            source_index: self.source_index,
            valid_fraction: self.valid_fraction,
            defined_fraction: self.defined.fraction(),
            aggregate_fraction: self.aggregate.defined.fraction(),
        };
        std::fs::write(dir.join("label.json"), serde_json::to_string_pretty(&meta).expect("sidecar serializes") + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub pose: Pose,
    pub lambda: Option<f64>,
    pub source_index: usize,
    pub valid_fraction: f64,
    pub defined_fraction: f64,
    pub aggregate_fraction: f64,
}

/// Builds a label from explicit depth maps: `target_depth` for the target
/// view and `depths` for every training view. No threshold on the result.
pub fn build_label_from_depths(
    ds: &Dataset,
    depths: &TrainingDepths,
    target_pose: &Pose,
    target_depth: DepthMap,
    source_index: usize,
    config: &CloseupConfig,
) -> Result<PseudoLabel, PseudoError> {
    let k = ds.intrinsics();
    if !ds.train_indices().contains(&source_index) {
        return Err(PseudoError::NotATrainingView(source_index));
    }
    let (image, defined) =
        backward_warp(target_pose, &target_depth, &ds.images[source_index], ds.pose(source_index), k);
    let sources: Vec<(&WarpSource, &Image)> = depths.views.iter().map(|v| (v, &ds.images[v.frame])).collect();
    let aggregate = forward_warp_aggregate(target_pose, &sources, k, config.splat);
    let mask = consistency_mask(&image, &defined, &aggregate.image, &aggregate.defined, config.rgb_match_threshold);
    let valid_fraction = mask.fraction();
    Ok(PseudoLabel { target_pose: *target_pose, source_index, target_depth, image, defined, aggregate, mask, valid_fraction })
}

/// Full-image label for `target_pose`, rendering its depth from `field`.
/// Does not apply `min_mask_fraction`.
pub fn build_label_for_pose(
    field: &VoxelRadianceField,
    ds: &Dataset,
    depths: &TrainingDepths,
    target_pose: &Pose,
    source_index: usize,
    config: &CloseupConfig,
    opts: &RenderOptions,
) -> Result<PseudoLabel, PseudoError> {
    let target_depth = render_image(field, target_pose, ds.intrinsics(), &opts.without_jitter(), 0).depth;
    build_label_from_depths(ds, depths, target_pose, target_depth, source_index, config)
}

/// Full-image label for a generated close-up pose, rejected when its valid
/// fraction falls below `config.min_mask_fraction`.
pub fn build_pseudo_label(
    field: &VoxelRadianceField,
    ds: &Dataset,
    depths: &TrainingDepths,
    target: &CloseupPose,
    config: &CloseupConfig,
    opts: &RenderOptions,
) -> Result<PseudoLabel, PseudoError> {
    let label = build_label_for_pose(field, ds, depths, &target.pose, target.source_index, config, opts)?;
    if label.valid_fraction < config.min_mask_fraction {
        return Err(PseudoError::LabelRejected {
            valid_fraction: label.valid_fraction,
            min_fraction: config.min_mask_fraction,
        });
    }
    Ok(label)
}

/// A supervised ray from a virtual view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoRay {
    pub pixel: (u32, u32),
    pub ray: Ray,
    pub color: Rgb,
}

/// Per-pixel pseudo labels for an explicit pixel set: renders depth only
/// along those rays, warps per pixel, and keeps mask-true entries in input order.
pub fn pseudo_rays_for_pixels(
    field: &VoxelRadianceField,
    ds: &Dataset,
    depths: &TrainingDepths,
    target_pose: &Pose,
    source_index: usize,
    pixels: &[(u32, u32)],
    config: &CloseupConfig,
    opts: &RenderOptions,
) -> Vec<PseudoRay> {
    let k = ds.intrinsics();
    let opts = opts.without_jitter();
    let rendered = render_pixels(field, target_pose, k, pixels, &opts);

    let mut slot_of = vec![usize::MAX; k.pixel_count()];
    let mut warped: Vec<Option<Rgb>> = Vec::with_capacity(pixels.len());
    for (slot, (&(u, v), r)) in pixels.iter().zip(&rendered).enumerate() {
        let label = r.valid_depth(&opts).and_then(|d| {
            backward_warp_pixel(target_pose, u, v, d, &ds.images[source_index], ds.pose(source_index), k)
        });
        if label.is_some() {
            slot_of[(v * k.width + u) as usize] = slot;
        }
        warped.push(label);
    }
    if warped.iter().all(Option::is_none) {
        return Vec::new();
    }
    let sources: Vec<(&WarpSource, &Image)> = depths.views.iter().map(|v| (v, &ds.images[v.frame])).collect();
    let mut agg_colors = vec![[0.0; 3]; pixels.len()];
    let mut agg_depths = vec![f64::INFINITY; pixels.len()];
    splat_into(target_pose, &sources, k, config.splat, &slot_of, &mut agg_colors, &mut agg_depths);

    pixels
        .iter()
        .enumerate()
        .filter_map(|(slot, &(u, v))| {
            let label = warped[slot]?;
            let ok = agg_depths[slot].is_finite() && colors_match(&label, &agg_colors[slot], config.rgb_match_threshold);
            ok.then(|| PseudoRay { pixel: (u, v), ray: pixel_to_ray(target_pose, k, u as f64, v as f64), color: label })
        })
        .collect()
}

/// Draws `batch` distinct random pixels of the target view and returns the
/// ones that survive the consistency mask.
pub fn pseudo_ray_batch<R: Rng + ?Sized>(
    field: &VoxelRadianceField,
    ds: &Dataset,
    depths: &TrainingDepths,
    target: &CloseupPose,
    batch: usize,
    config: &CloseupConfig,
    opts: &RenderOptions,
    rng: &mut R,
) -> Vec<PseudoRay> {
    let pixels = sample_pixels(ds.intrinsics(), batch, rng);
    pseudo_rays_for_pixels(field, ds, depths, &target.pose, target.source_index, &pixels, config, opts)
}

/// `count` distinct pixels drawn uniformly (all pixels if `count` exceeds the image).
pub fn sample_pixels<R: Rng + ?Sized>(k: &Intrinsics, count: usize, rng: &mut R) -> Vec<(u32, u32)> {
    let n = k.pixel_count();
    sample_indices(rng, n, count.min(n))
        .into_iter()
        .map(|i| ((i as u32) % k.width, (i as u32) / k.width))
        .collect()
}

/// Relative depth slack under which a point still counts as the visible surface.
pub const VISIBILITY_SLACK: f64 = 0.03;

/// Per training view, the number of target pixels at which one of its
/// valid-depth points lands in front of the camera and is not hidden behind
/// another view's point. Points go to their nearest pixel; a point is visible
/// when its target ray distance is within [`VISIBILITY_SLACK`] of the
/// pixel's minimum over all views.
pub fn overlap_counts(depths: &TrainingDepths, target_pose: &Pose, k: &Intrinsics) -> Vec<(usize, usize)> {
    let center = target_pose.center();
    let hits: Vec<Vec<(usize, f64)>> = depths
        .views
        .iter()
        .map(|view| {
            view.points
                .iter()
                .filter_map(|(_, x, _)| {
                    let p = project_point(target_pose, k, x).ok().filter(|p| k.contains(p.u, p.v))?;
                    let pixel = p.v.floor() as usize * k.width as usize + p.u.floor() as usize;
                    Some((pixel, (x - center).norm()))
                })
                .collect()
        })
        .collect();
    let mut nearest = vec![f64::INFINITY; k.pixel_count()];
    for &(pixel, d) in hits.iter().flatten() {
        nearest[pixel] = nearest[pixel].min(d);
    }
    depths
        .views
        .iter()
        .zip(&hits)
        .map(|(view, h)| {
            let mut covered = vec![false; k.pixel_count()];
            for &(pixel, d) in h {
                if d <= nearest[pixel] * (1.0 + VISIBILITY_SLACK) {
                    covered[pixel] = true;
                }
            }
            (view.frame, covered.iter().filter(|&&c| c).count())
        })
        .collect()
}

/// Training frame with the largest overlap count; ties go to the lowest frame index.
pub fn select_source_view(depths: &TrainingDepths, target_pose: &Pose, k: &Intrinsics) -> Result<usize, PseudoError> {
    argmax_overlap(&overlap_counts(depths, target_pose, k))
}

pub fn argmax_overlap(counts: &[(usize, usize)]) -> Result<usize, PseudoError> {
    let mut best: Option<(usize, usize)> = None;
    for &(frame, tau) in counts {
        best = match best {
            Some((bf, bt)) if bt > tau || (bt == tau && bf < frame) => Some((bf, bt)),
            _ => Some((frame, tau)),
        };
    }
    match best {
        Some((frame, tau)) if tau > 0 => Ok(frame),
        _ => Err(PseudoError::NoOverlap),
    }
}
