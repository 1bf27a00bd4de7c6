#![allow(dead_code)]

use nearview::data::{
    make_benchmark, oracle_render, Albedo, Benchmark, BenchmarkConfig, Dataset, DatasetManifest, Frame, Primitive,
    Shape, Split, SyntheticScene, MANIFEST_FORMAT, MANIFEST_VERSION, POSE_CONVENTION,
};
use nearview::field::{Aabb, RenderOptions, VoxelRadianceField};
use nearview::geometry::{Intrinsics, Pose, Ray, Vec3};
use nearview::pseudo::{CloseupConfig, TrainingDepths};
use rand::{Rng, SeedableRng};
use nearview::training::{init_field, train_baseline, FieldInit, TrainConfig};

pub const WALL: [f64; 3] = [0.2, 0.3, 0.9];
pub const BOX: [f64; 3] = [0.9, 0.25, 0.2];

pub fn solid(shape: Shape, color: [f64; 3]) -> Primitive {
    Primitive { shape, albedo: Albedo::Solid { color }, glossy: false }
}

/// Small box in front of a wall, lit head-on so every front face shades alike.
pub fn box_and_wall() -> SyntheticScene {
    SyntheticScene {
        primitives: vec![
            solid(Shape::Cuboid { min: [-3.0, -2.0, 2.0], max: [3.0, 2.0, 2.3] }, WALL),
            solid(Shape::Cuboid { min: [-0.35, -0.35, 0.6], max: [0.35, 0.35, 1.3] }, BOX),
        ],
        background: [1.0, 1.0, 1.0],
        light_dir: [0.0, 0.0, -1.0],
        ambient: 0.4,
    }
}

pub fn look(eye: [f64; 3], at: [f64; 3]) -> Pose {
    Pose::look_at(Vec3::from(eye), Vec3::from(at), Vec3::y()).unwrap()
}

/// Dataset whose images are exact oracle renders (unquantized).
pub fn oracle_dataset(scene: &SyntheticScene, k: &Intrinsics, train: &[Pose], test: &[Pose]) -> Dataset {
    let mut frames = Vec::new();
    let mut images = Vec::new();
    for (split, poses) in [(Split::Train, train), (Split::Test, test)] {
        for (i, pose) in poses.iter().enumerate() {
            frames.push(Frame { image: format!("images/{split:?}_{i}.png").to_lowercase().into(), pose: *pose, split });
            images.push(oracle_render(scene, pose, k).rgb);
        }
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        scene: "handmade".into(),
        pose_convention: POSE_CONVENTION.into(),
        intrinsics: *k,
        background: Some(scene.background),
        frames,
    };
    Dataset { manifest, images }
}

/// Side training views of the box-and-wall scene and a close frontal target.
pub fn occlusion_setup() -> (SyntheticScene, Dataset, Pose) {
    let scene = box_and_wall();
    let k = Intrinsics::from_horizontal_fov(80, 60, 60f64.to_radians()).unwrap();
    let at = [0.0, 0.0, 0.95];
    let train: Vec<Pose> = [[-2.4, 0.3, -1.5], [2.4, -0.3, -1.5], [-1.2, 1.2, -2.2], [1.2, -1.0, -2.4], [0.0, 0.2, -3.0]]
        .into_iter()
        .map(|eye| look(eye, at))
        .collect();
    let target = look([0.3, 0.1, -0.9], at);
    let ds = oracle_dataset(&scene, &k, &train, &[target]);
    (scene, ds, target)
}

/// Training depths taken from the analytic scene instead of a field.
pub fn oracle_depths(scene: &SyntheticScene, ds: &Dataset, cfg: &CloseupConfig) -> TrainingDepths {
    let k = ds.intrinsics();
    let maps = ds.train_indices().into_iter().map(|i| (i, oracle_render(scene, ds.pose(i), k).depth)).collect();
    TrainingDepths::from_maps(ds, maps, cfg)
}

pub fn small_benchmark(seed: u64) -> Benchmark {
    let cfg = BenchmarkConfig { n_train: 20, n_val: 2, n_test: 4, width: 96, height: 56, ..Default::default() };
    make_benchmark(seed, &cfg).unwrap()
}

pub fn eval_options(ds: &Dataset) -> RenderOptions {
    RenderOptions { background: ds.manifest.background.unwrap(), ..RenderOptions::default() }
}

/// A briefly trained low-resolution field: enough for valid depth everywhere on the scene.
pub fn quick_field(ds: &Dataset, iterations: usize, seed: u64) -> VoxelRadianceField {
    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, seed).unwrap();
    let mut cfg = TrainConfig { iterations, batch_size: 1024, seed, ..TrainConfig::default() };
    cfg.render.background = ds.manifest.background.unwrap();
    train_baseline(&init, ds, &cfg).unwrap().0
}

pub fn full_benchmark(seed: u64) -> Benchmark {
    make_benchmark(seed, &BenchmarkConfig::default()).unwrap()
}

/// Random field on the unit cube with densities around the visible range.
pub fn random_field(res: [usize; 3], seed: u64) -> VoxelRadianceField {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut f = VoxelRadianceField::new(res, Aabb::new([-1.0; 3], [1.0; 3]).unwrap()).unwrap();
    f.density_params_mut().iter_mut().for_each(|s| *s = rng.gen_range(-1.0..2.0));
    f.color_params_mut().iter_mut().for_each(|a| *a = rng.gen_range(-1.5..1.5));
    f
}

/// Rays entering the unit cube from random points on a radius-3 sphere.
pub fn random_rays(n: usize, seed: u64) -> Vec<Ray> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let o = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if v.norm() > 0.1 && v.norm() <= 1.0 {
                    break 3.0 * v.normalize();
                }
            };
            let aim = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            Ray::new(o, (aim - o).normalize(), 0.0, 6.0).unwrap()
        })
        .collect()
}

pub struct FdOutcome {
    pub checked: usize,
    pub worst_relative_error: f64,
}

/// Central differences against the analytic gradient on `count` parameters with
/// the largest analytic magnitude, split evenly between density and color.
pub fn finite_difference_check(field: &VoxelRadianceField, rays: &[Ray], count: usize, h: f64) -> FdOutcome {
    use nearview::field::{batch_loss, loss_and_gradients};
    let opts = RenderOptions { n_samples: 48, background: [0.3, 0.6, 0.9], ..RenderOptions::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let targets: Vec<[f64; 3]> = (0..rays.len()).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let (_, g) = loss_and_gradients(field, rays, &targets, &opts).unwrap();
    let top = |grad: &[f64]| {
        let mut idx: Vec<usize> = (0..grad.len()).collect();
        idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
        idx.truncate(count / 2);
        idx
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (density, idx) in [(true, top(&g.density)), (false, top(&g.color))] {
        for i in idx {
            let analytic = if density { g.density[i] } else { g.color[i] };
            let mut f = field.clone();
            let mut loss_at = |delta: f64| {
                let p = if density { &mut f.density_params_mut()[i] } else { &mut f.color_params_mut()[i] };
                let old = *p;
                *p = old + delta;
                let l = batch_loss(&f, rays, &targets, &opts).unwrap();
                let p = if density { &mut f.density_params_mut()[i] } else { &mut f.color_params_mut()[i] };
                *p = old;
                l
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    FdOutcome { checked, worst_relative_error: worst }
}
