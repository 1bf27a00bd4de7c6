//! Datasets: manifest I/O and the analytic synthetic-scene benchmark.
//!
//! The synthetic scene is a handful of spheres and boxes on a ground slab,
//! shaded with a fixed directional light. Its ray tracer is exact, so it
//! doubles as the ground-truth oracle for depth, visibility and color.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pixel_to_ray, EulerAngles, Intrinsics, Pose, Ray, Vec3};
use crate::pseudo::closeup_pose;
use crate::raster::{DepthMap, Image, Mask, RasterError, Rgb};

pub const MANIFEST_FORMAT: &str = "nearview-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const POSE_CONVENTION: &str =
    "camera-to-world [R|t], 3x4 row-major; camera frame +x right, +y down, +z forward";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("manifest version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("image {path} is {actual:?}, intrinsics say {expected:?}")]
    ResolutionMismatch { path: PathBuf, expected: (u32, u32), actual: (u32, u32) },
    #[error("malformed manifest {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("dataset needs at least 2 training frames, found {0}")]
    TooFewTrainFrames(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("benchmark generation failed: {0}")]
    Generation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    /// Held-out views from the training distribution (in-domain).
    Val,
    /// Close-up evaluation views.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub image: PathBuf,
    pub pose: Pose,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub scene: String,
    pub pose_convention: String,
    pub intrinsics: Intrinsics,
    /// Known background color, if the capture has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Rgb>,
    pub frames: Vec<Frame>,
}

/// A manifest together with its decoded images (same order as `frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.manifest.intrinsics
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest.frames.iter().enumerate().filter(|(_, f)| f.split == split).map(|(i, _)| i).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.manifest.frames[i].pose
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n_train = self.train_indices().len();
        if n_train < 2 {
            return Err(DataError::TooFewTrainFrames(n_train));
        }
        let k = self.intrinsics();
        for (frame, img) in self.manifest.frames.iter().zip(&self.images) {
            if img.size() != (k.width, k.height) {
                return Err(DataError::ResolutionMismatch {
                    path: frame.image.clone(),
                    expected: (k.width, k.height),
                    actual: img.size(),
                });
            }
        }
        Ok(())
    }
}

/// Loads a manifest JSON file and every image it references (paths are
/// relative to the manifest's directory).
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::MissingFile(path.to_path_buf()),
        _ => DataError::Io { path: path.to_path_buf(), source: e },
    })?;
    let malformed = |reason: String| DataError::Malformed { path: path.to_path_buf(), reason };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(MANIFEST_FORMAT) {
        return Err(malformed(format!("format must be \"{MANIFEST_FORMAT}\"")));
    }
    let found = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| malformed("missing version".into()))?;
    if found != MANIFEST_VERSION as u64 {
        return Err(DataError::VersionMismatch { expected: MANIFEST_VERSION, found: found as u32 });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw).map_err(|e| malformed(e.to_string()))?;
    manifest.intrinsics.validate().map_err(|e| malformed(e.to_string()))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let p = root.join(&frame.image);
        if !p.exists() {
            return Err(DataError::MissingFile(p));
        }
        images.push(Image::load_png(&p)?);
    }
    let ds = Dataset { manifest, images };
    ds.validate()?;
    Ok(ds)
}

/// Writes every image to its manifest-relative path and the manifest to `path`.
pub fn save_manifest(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let root = path.parent().unwrap_or(Path::new("."));
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DataError::Io { path: p, source }
    };
    for (frame, img) in ds.manifest.frames.iter().zip(&ds.images) {
        let p = root.join(&frame.image);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(io(dir))?;
        }
        img.save_png(&p)?;
    }
    let json = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    fs::write(path, json + "\n").map_err(io(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Solid { color: Rgb },
    /// 3D checkerboard with cells of size `scale`.
    Checker { a: Rgb, b: Rgb, scale: f64 },
    /// Linear blend from `a` at `from` to `b` at `to` along world axis `axis`.
    Gradient { a: Rgb, b: Rgb, axis: usize, from: f64, to: f64 },
}

impl Albedo {
    pub fn at(&self, p: &Vec3) -> Rgb {
        match *self {
            Albedo::Solid { color } => color,
            Albedo::Checker { a, b, scale } => {
                let s = (p.x / scale).floor() as i64 + (p.y / scale).floor() as i64 + (p.z / scale).floor() as i64;
                if s.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
            Albedo::Gradient { a, b, axis, from, to } => {
                let f = ((p[axis] - from) / (to - from)).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| a[c] + f * (b[c] - a[c]))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Cuboid { min: [f64; 3], max: [f64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
    /// Adds a view-dependent specular lobe; everything else is Lambertian.
    #[serde(default)]
    pub glossy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub background: Rgb,
    /// Unit direction pointing towards the light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub primitive: usize,
}

fn intersect_shape(shape: &Shape, ray: &Ray) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { center, radius } => {
            let c = Vec3::from(center);
            let oc = ray.origin - c;
            let b = oc.dot(&ray.direction);
            let disc = b * b - (oc.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = [-b - sq, -b + sq].into_iter().find(|&t| t > ray.t_near && t < ray.t_far)?;
            Some((t, (ray.at(t) - c) / radius))
        }
        Shape::Cuboid { min, max } => {
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut n0 = Vec3::zeros();
            let mut n1 = Vec3::zeros();
            for a in 0..3 {
                let d = ray.direction[a];
                let o = ray.origin[a];
                if d.abs() < 1e-15 {
                    if o < min[a] || o > max[a] {
                        return None;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((min[a] - o) / d, (max[a] - o) / d);
                let mut na = Vec3::zeros();
                na[a] = -1.0;
                let mut nb = -na;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                    std::mem::swap(&mut na, &mut nb);
                }
                if ta > t0 {
                    t0 = ta;
                    n0 = na;
                }
                if tb < t1 {
                    t1 = tb;
                    n1 = nb;
                }
            }
            if t0 > t1 {
                return None;
            }
            if t0 > ray.t_near && t0 < ray.t_far {
                Some((t0, n0))
            } else if t1 > ray.t_near && t1 < ray.t_far {
                Some((t1, -n1))
            } else {
                None
            }
        }
    }
}

impl SyntheticScene {
    /// Nearest intersection along `ray`.
    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = intersect_shape(&p.shape, ray) {
                if best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { t, point: ray.at(t), normal, primitive: i });
                }
            }
        }
        best
    }

    pub fn shade(&self, hit: &Hit, view_dir: &Vec3) -> Rgb {
        let prim = &self.primitives[hit.primitive];
        // Evaluate just inside the surface so faces lying on checker cell
        // boundaries do not flicker between cells.
        let albedo = prim.albedo.at(&(hit.point - 1e-7 * hit.normal));
        let l = Vec3::from(self.light_dir);
        let lambert = hit.normal.dot(&l).max(0.0);
        let light = self.ambient + (1.0 - self.ambient) * lambert;
        let mut c = albedo.map(|a| a * light);
        if prim.glossy {
            let r = 2.0 * hit.normal.dot(&l) * hit.normal - l;
            let spec = 0.6 * r.dot(&(-view_dir)).max(0.0).powi(24);
            c = c.map(|x| x + spec);
        }
        c.map(|x| x.clamp(0.0, 1.0))
    }

    pub fn radiance(&self, ray: &Ray) -> (Rgb, Option<Hit>) {
        match self.trace(ray) {
            Some(hit) => (self.shade(&hit, &ray.direction), Some(hit)),
            None => (self.background, None),
        }
    }

    pub fn has_view_dependence(&self) -> bool {
        self.primitives.iter().any(|p| p.glossy)
    }
}

/// Ground-truth render: color, ray-distance depth and hit mask.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleView {
    pub rgb: Image,
    pub depth: DepthMap,
    pub hit: Mask,
}

pub fn oracle_render(scene: &SyntheticScene, pose: &Pose, k: &Intrinsics) -> OracleView {
    let mut rgb = Image::new(k.width, k.height, scene.background);
    let mut depth = DepthMap::new(k.width, k.height);
    let mut hit = Mask::new(k.width, k.height, false);
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = pixel_to_ray(pose, k, u as f64, v as f64);
            let (c, h) = scene.radiance(&ray);
            rgb.set(u, v, c);
            if let Some(h) = h {
                depth.set(u, v, Some(h.t));
                hit.set(u, v, true);
            }
        }
    }
    OracleView { rgb, depth, hit }
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_train: usize,
    /// In-domain held-out views on the same ring as the training views.
    pub n_val: usize,
    /// Close-up test views.
    pub n_test: usize,
    pub width: u32,
    pub height: u32,
    pub hfov_degrees: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub look_at: [f64; 3],
    /// Magnification range for test views.
    pub test_lambda: (f64, f64),
    /// Bound on each Euler-angle perturbation of test views, radians.
    pub test_angle_bound: f64,
    /// Minimum fraction of test-view pixels that must hit geometry.
    pub min_test_coverage: f64,
    /// Replace one object with a glossy (view-dependent) sphere.
    pub glossy: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_train: 30,
            n_val: 6,
            n_test: 10,
            width: 192,
            height: 108,
            hfov_degrees: 50.0,
            ring_radius: 6.0,
            ring_height: 2.2,
            look_at: [0.0, 0.4, 0.0],
            test_lambda: (3.0, 6.0),
            test_angle_bound: std::f64::consts::FRAC_PI_4,
            min_test_coverage: 0.5,
            glossy: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, DataError> {
        Intrinsics::from_horizontal_fov(self.width, self.height, self.hfov_degrees.to_radians())
            .map_err(|e| DataError::Generation(e.to_string()))
    }

    /// World box that contains every primitive the generator can place.
    pub fn scene_bounds() -> ([f64; 3], [f64; 3]) {
        ([-2.2, -0.25, -2.2], [2.2, 1.9, 2.2])
    }
}

fn random_color<R: Rng>(rng: &mut R) -> Rgb {
    [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)]
}

fn random_albedo<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Albedo {
    match rng.gen_range(0..3) {
        0 => {
            let a = random_color(rng);
            Albedo::Checker { a, b: a.map(|c| c * 0.9), scale: rng.gen_range(0.15..0.3) }
        }
        1 => Albedo::Checker { a: random_color(rng), b: random_color(rng), scale: rng.gen_range(0.5..0.8) },
        _ => Albedo::Gradient { a: random_color(rng), b: random_color(rng), axis: 1, from: lo, to: hi },
    }
}

/// Random tabletop scene: a checkered ground slab with 3 to 5 objects.
pub fn random_scene(seed: u64, glossy: bool) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = vec![Primitive {
        shape: Shape::Cuboid { min: [-2.0, -0.2, -2.0], max: [2.0, 0.0, 2.0] },
        albedo: Albedo::Checker { a: [0.8, 0.75, 0.6], b: [0.72, 0.675, 0.54], scale: 0.5 },
        glossy: false,
    }];
    let n_objects = rng.gen_range(3..=5);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while placed.len() < n_objects && attempts < 1000 {
        attempts += 1;
        let size = rng.gen_range(0.3..0.6);
        let (x, z) = (rng.gen_range(-1.4..1.4), rng.gen_range(-1.4..1.4));
        if placed.iter().any(|&(px, pz, ps)| ((px - x).powi(2) + (pz - z).powi(2)).sqrt() < ps + size + 0.1) {
            continue;
        }
        placed.push((x, z, size));
        let shape = if rng.gen_bool(0.5) {
            Shape::Sphere { center: [x, size, z], radius: size }
        } else {
            let h = rng.gen_range(0.4..1.6);
            Shape::Cuboid { min: [x - size * 0.8, 0.0, z - size * 0.8], max: [x + size * 0.8, h, z + size * 0.8] }
        };
        let top = match shape {
            Shape::Sphere { radius, .. } => 2.0 * radius,
            Shape::Cuboid { max, .. } => max[1],
        };
        primitives.push(Primitive { shape, albedo: random_albedo(&mut rng, 0.0, top), glossy: false });
    }
    if glossy {
        if let Some(p) = primitives.iter_mut().skip(1).find(|p| matches!(p.shape, Shape::Sphere { .. })) {
            p.glossy = true;
        } else if let Some(&(x, z, size)) = placed.first() {
            primitives[1] = Primitive {
                shape: Shape::Sphere { center: [x, size, z], radius: size },
                albedo: Albedo::Solid { color: [0.6, 0.2, 0.2] },
                glossy: true,
            };
        }
    }
    let l = Vec3::new(0.4, 1.0, 0.3).normalize();
    SyntheticScene { primitives, background: [0.9, 0.92, 0.97], light_dir: [l.x, l.y, l.z], ambient: 0.35 }
}

/// Ring pose `index` of `count`, optionally offset by half a step.
pub fn ring_pose(cfg: &BenchmarkConfig, index: usize, count: usize, half_step: bool) -> Result<Pose, DataError> {
    let step = std::f64::consts::TAU / count as f64;
    let angle = (index as f64 + if half_step { 0.5 } else { 0.0 }) * step;
    let eye = Vec3::new(cfg.ring_radius * angle.cos(), cfg.ring_height, cfg.ring_radius * angle.sin());
    Pose::look_at(eye, Vec3::from(cfg.look_at), Vec3::y()).map_err(|e| DataError::Generation(e.to_string()))
}

/// Generated test view with the anchor that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TestViewInfo {
    pub source_frame: usize,
    pub anchor: Vec3,
    pub lambda: f64,
}

/// Synthetic benchmark: scene, dataset, and per-test-view provenance.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub scene: SyntheticScene,
    pub dataset: Dataset,
    pub test_info: Vec<TestViewInfo>,
}

/// Builds the synthetic benchmark for `seed`.
///
/// Training and validation views sit on a ring around the scene looking at
/// its center; test views are close-ups generated by moving a training camera
/// towards an oracle surface point by a factor `lambda` and perturbing its
/// Euler angles.
pub fn make_benchmark(seed: u64, cfg: &BenchmarkConfig) -> Result<Benchmark, DataError> {
    if cfg.n_train < 2 {
        return Err(DataError::TooFewTrainFrames(cfg.n_train));
    }
    let k = cfg.intrinsics()?;
    let scene = random_scene(seed, cfg.glossy);
    let mut frames = Vec::new();
    let mut images = Vec::new();
    let mut train_views = Vec::new();
    for i in 0..cfg.n_train {
        let pose = ring_pose(cfg, i, cfg.n_train, false)?;
        let view = oracle_render(&scene, &pose, &k);
        frames.push(Frame { image: format!("images/train_{i:03}.png").into(), pose, split: Split::Train });
        images.push(view.rgb.quantized());
        train_views.push((pose, view));
    }
    for i in 0..cfg.n_val {
        // Interleaved between training azimuths, at slightly different heights.
        let mut c = cfg.clone();
        c.ring_height = cfg.ring_height * if i % 2 == 0 { 0.93 } else { 1.07 };
        let pose = ring_pose(&c, i * cfg.n_train / cfg.n_val.max(1), cfg.n_train, true)?;
        frames.push(Frame { image: format!("images/val_{i:03}.png").into(), pose, split: Split::Val });
        images.push(oracle_render(&scene, &pose, &k).rgb.quantized());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_c105_e0ff_5eed);
    let mut test_info = Vec::new();
    let mut attempts = 0;
    while test_info.len() < cfg.n_test {
        attempts += 1;
        if attempts > 200 * cfg.n_test.max(1) {
            return Err(DataError::Generation("could not place enough close-up test views".into()));
        }
        let source = rng.gen_range(0..cfg.n_train);
        let (src_pose, view) = &train_views[source];
        let (u, v) = (rng.gen_range(0..k.width), rng.gen_range(0..k.height));
        let Some(depth) = view.depth.get(u, v) else { continue };
        let anchor = pixel_to_ray(src_pose, &k, u as f64, v as f64).at(depth);
        let lambda = rng.gen_range(cfg.test_lambda.0..=cfg.test_lambda.1);
        let b = cfg.test_angle_bound;
        let delta = EulerAngles::new(rng.gen_range(-b..=b), rng.gen_range(-b..=b), rng.gen_range(-b..=b));
        let pose = closeup_pose(src_pose, &anchor, lambda, &delta);
        let test_view = oracle_render(&scene, &pose, &k);
        if test_view.hit.fraction() < cfg.min_test_coverage {
            continue;
        }
        let i = test_info.len();
        frames.push(Frame { image: format!("images/test_{i:03}.png").into(), pose, split: Split::Test });
        images.push(test_view.rgb.quantized());
        test_info.push(TestViewInfo { source_frame: source, anchor, lambda });
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        scene: format!("synthetic-{seed}"),
        pose_convention: POSE_CONVENTION.into(),
        intrinsics: k,
        background: Some(scene.background),
        frames,
    };
    Ok(Benchmark { scene, dataset: Dataset { manifest, images }, test_info })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> BenchmarkConfig {
        BenchmarkConfig { n_train: 10, n_val: 2, n_test: 5, width: 64, height: 36, ..Default::default() }
    }

    #[test]
    fn sphere_on_axis_depth_is_exact() {
        let scene = SyntheticScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 },
                albedo: Albedo::Solid { color: [0.5; 3] },
                glossy: false,
            }],
            background: [0.0; 3],
            light_dir: [0.0, 0.0, -1.0],
            ambient: 0.2,
        };
        let k = Intrinsics::new(20.0, 20.0, 16.5, 16.5, 33, 33).unwrap();
        let view = oracle_render(&scene, &Pose::identity(), &k);
        assert_eq!(view.depth.get(16, 16), Some(4.0));
        assert!(view.hit.get(16, 16));
        assert_eq!(view.rgb.get(16, 16), [0.5; 3]);

        let away = Pose::look_at(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0), Vec3::y()).unwrap();
        let v = oracle_render(&scene, &away, &k);
        assert_eq!(v.hit.count(), 0);
        assert!(v.rgb.pixels().iter().all(|p| *p == scene.background));
    }

    #[test]
    fn cuboid_from_inside_and_outside() {
        let shape = Shape::Cuboid { min: [-1.0; 3], max: [1.0; 3] };
        let outside = Ray::new(Vec3::new(-3.0, 0.0, 0.0), Vec3::x(), 0.0, 100.0).unwrap();
        let (t, n) = intersect_shape(&shape, &outside).unwrap();
        assert_abs_diff_eq!(t, 2.0);
        assert_eq!(n, -Vec3::x());
        let inside = Ray::new(Vec3::zeros(), Vec3::x(), 0.0, 100.0).unwrap();
        assert_abs_diff_eq!(intersect_shape(&shape, &inside).unwrap().0, 1.0);
    }

    #[test]
    fn supersampled_render_agrees() {
        let scene = random_scene(3, false);
        let cfg = BenchmarkConfig { width: 160, height: 90, ..Default::default() };
        let k = cfg.intrinsics().unwrap();
        let k2 = Intrinsics::new(2.0 * k.fx, 2.0 * k.fy, 2.0 * k.cx, 2.0 * k.cy, 320, 180).unwrap();
        let pose = ring_pose(&cfg, 3, 10, false).unwrap();
        let lo = oracle_render(&scene, &pose, &k).rgb;
        let hi = oracle_render(&scene, &pose, &k2).rgb.downsample2();
        let mae = lo.mean_abs_diff(&hi);
        assert!(mae < 0.02, "{mae}");
    }

    #[test]
    fn benchmark_structure() {
        let cfg = small_cfg();
        let b = make_benchmark(11, &cfg).unwrap();
        let ds = &b.dataset;
        ds.validate().unwrap();
        let k = ds.intrinsics();
        for i in ds.train_indices() {
            let d = (ds.pose(i).center() - Vec3::from(cfg.look_at)).norm();
            let ring = Vec3::new(cfg.ring_radius, cfg.ring_height - cfg.look_at[1], 0.0).norm();
            assert!((d / ring - 1.0).abs() <= 0.1);
        }
        let tests = ds.indices(Split::Test);
        assert_eq!(tests.len(), 5);
        for (j, &i) in tests.iter().enumerate() {
            let c = ds.pose(i).center();
            assert!(Vec3::new(c.x, 0.0, c.z).norm() < cfg.ring_radius);
            let info = &b.test_info[j];
            let src = ds.pose(info.source_frame).center();
            assert!((c - info.anchor).norm() <= 0.5 * (src - info.anchor).norm() + 1e-9);
            assert!(oracle_render(&b.scene, ds.pose(i), k).hit.fraction() >= 0.5);
        }
        let again = make_benchmark(11, &cfg).unwrap();
        assert_eq!(again.dataset, b.dataset);
    }

    #[test]
    fn oracle_depth_is_multiview_consistent() {
        let cfg = small_cfg();
        let b = make_benchmark(5, &cfg).unwrap();
        let k = *b.dataset.intrinsics();
        let (pa, pb) = (*b.dataset.pose(0), *b.dataset.pose(1));
        let va = oracle_render(&b.scene, &pa, &k);
        let mut checked = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                let Some(d) = va.depth.get(u, v) else { continue };
                let x = crate::geometry::point_from_depth(&pa, &k, u as f64, v as f64, d).unwrap();
                let Ok(p) = crate::geometry::project_point(&pb, &k, &x) else { continue };
                // Only test exact hits on pixel centers of b: re-trace b's ray through the projection.
                let ray = crate::geometry::ray_through(&pb, &k, p.u, p.v);
                if let Some(h) = b.scene.trace(&ray) {
                    let expected = (x - pb.center()).norm();
                    if (h.t - expected).abs() < 1e-3 {
                        assert!((h.point - x).norm() < 1e-4);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let b = make_benchmark(2, &BenchmarkConfig { n_test: 1, ..small_cfg() }).unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(&b.dataset, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), b.dataset);

        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 7");
        let bad = dir.path().join("bad.json");
        fs::write(&bad, text).unwrap();
        assert!(matches!(load_manifest(&bad), Err(DataError::VersionMismatch { found: 7, .. })));

        assert!(matches!(load_manifest(&dir.path().join("nope.json")), Err(DataError::MissingFile(_))));

        fs::remove_file(dir.path().join("images/train_003.png")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MissingFile(_))));

        Image::new(10, 10, [0.0; 3]).save_png(&dir.path().join("images/train_003.png")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::ResolutionMismatch { .. })));
    }
}
