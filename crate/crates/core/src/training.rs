//! Optimization loops: baseline reconstruction, close-up fine-tuning with
//! pseudo-labels (batched rays or full images), and test-time fine-tuning.
//!
//! Every fine-tuning step minimises `L = (L_c + L_pl) / 2`, each term being the
//! mean squared RGB error (summed over channels) of its own half-batch. When
//! no pseudo ray survives the mask the step uses `L_c` alone.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::field::{accumulate_gradients, Aabb, FieldError, SH_COEFFS, Gradients, RenderOptions, VoxelRadianceField};
use crate::geometry::{pixel_to_ray, Pose, Ray};
use crate::pseudo::{
    build_label_for_pose, build_pseudo_label, generate_closeup_pose, pseudo_ray_batch, select_source_view,
    CloseupConfig, PseudoError, PseudoLabel, PseudoRay, TrainingDepths,
};
use crate::raster::Rgb;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset has {0} training views, need at least 2")]
    TooFewViews(usize),
    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize, report: Box<TrainReport> },
    #[error("no test pose overlaps a training view")]
    NoUsablePoses { report: Box<TrainReport> },
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Partial report for aborted runs.
    pub fn report(&self) -> Option<&TrainReport> {
        match self {
            TrainError::Divergence { report, .. } | TrainError::NoUsablePoses { report } => Some(report),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    FinetuneDiverse,
    FinetuneFullimage,
    FinetuneTesttime,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::FinetuneDiverse => "finetune_diverse",
            TrainMode::FinetuneFullimage => "finetune_fullimage",
            TrainMode::FinetuneTesttime => "finetune_testtime",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "baseline" => Ok(TrainMode::Baseline),
            "finetune_diverse" | "diverse" => Ok(TrainMode::FinetuneDiverse),
            "finetune_fullimage" | "fullimage" => Ok(TrainMode::FinetuneFullimage),
            "finetune_testtime" | "testtime" => Ok(TrainMode::FinetuneTesttime),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: usize,
    /// Rays per step; fine-tuning splits it evenly between training and pseudo rays.
    pub batch_size: usize,
    /// Adam step size for color coefficients.
    pub learning_rate: f64,
    /// Adam step size for density logits.
    pub density_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub render: RenderOptions,
    pub closeup: CloseupConfig,
    /// Re-render cached training-view depths every this many fine-tuning iterations.
    pub depth_refresh_interval: usize,
    /// Take all depths from the input field instead of the one being optimized.
    pub freeze_depth_field: bool,
    /// Test-time mode runs this many iterations per usable test pose.
    pub iterations_per_view: usize,
    /// Pose resamples allowed per full-image iteration when labels are rejected.
    pub max_label_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            iterations: 2000,
            batch_size: 2048,
            learning_rate: 1e-2,
            density_learning_rate: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            render: RenderOptions { stratified_jitter: true, ..RenderOptions::default() },
            closeup: CloseupConfig::default(),
            depth_refresh_interval: 250,
            freeze_depth_field: false,
            iterations_per_view: 5,
            max_label_retries: 8,
        }
    }
}

impl TrainConfig {
    /// Defaults for `mode`. Fine-tuning starts from a converged field and
    /// uses smaller steps; test-time steps are smaller still because they
    /// only see a handful of labels.
    pub fn for_mode(mode: TrainMode) -> Self {
        let (learning_rate, density_learning_rate) = match mode {
            TrainMode::Baseline => (1e-2, 1.0),
            TrainMode::FinetuneDiverse | TrainMode::FinetuneFullimage => (1e-2, 1e-1),
            TrainMode::FinetuneTesttime => (3e-3, 1e-2),
        };
        Self { mode, learning_rate, density_learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.mode != TrainMode::Baseline && self.mode != TrainMode::FinetuneFullimage && self.batch_size < 2 {
            return bad("fine-tuning needs batch_size >= 2");
        }
        if !(self.learning_rate > 0.0 && self.density_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.depth_refresh_interval == 0 {
            return bad("depth_refresh_interval must be positive");
        }
        if self.mode == TrainMode::FinetuneTesttime && self.iterations_per_view == 0 {
            return bad("iterations_per_view must be positive");
        }
        self.render.validate()?;
        self.closeup.validate()?;
        Ok(())
    }
}

/// Adam moments for every field parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl OptimizerState {
    pub fn new(field: &VoxelRadianceField) -> Self {
        Self { step: 0, m: Gradients::zeros_like(field), v: Gradients::zeros_like(field) }
    }

    pub fn apply(&mut self, field: &mut VoxelRadianceField, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64| {
            let step = lr / c1;
            let c2s = c2.sqrt();
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() / c2s + eps);
            }
        };
        update(field.density_params_mut(), &grads.density, &mut self.m.density, &mut self.v.density, cfg.density_learning_rate);
        update(field.color_params_mut(), &grads.color, &mut self.m.color, &mut self.v.color, cfg.learning_rate);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub loss_c: f64,
    pub loss_pl: Option<f64>,
    pub pseudo_rays: usize,
    pub valid_fraction: Option<f64>,
}

/// Outcome of one test pose in test-time mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseOutcome {
    pub index: usize,
    pub source_index: Option<usize>,
    pub valid_fraction: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub poses: Vec<PoseOutcome>,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl TrainReport {
    fn new(cfg: &TrainConfig) -> Self {
        Self { mode: cfg.mode, seed: cfg.seed, records: Vec::new(), poses: Vec::new(), wall_time_seconds: 0.0 }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// One JSON object per line: a header with mode, seed and pose outcomes,
    /// then one line per iteration.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            mode: TrainMode,
            seed: u64,
            iterations: usize,
            poses: &'a [PoseOutcome],
        }
        let header = Header { mode: self.mode, seed: self.seed, iterations: self.records.len(), poses: &self.poses };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

/// Grid layout and starting values for a fresh field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldInit {
    pub resolution: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Initial density logit `s`; `softplus(s)` is the starting density.
    pub density_logit: f64,
    /// Std-dev of Gaussian noise on the degree-1 color coefficients. The
    /// constant term starts at zero.
    pub sh_noise: f64,
}

impl Default for FieldInit {
    fn default() -> Self {
        let (min, max) = crate::data::BenchmarkConfig::scene_bounds();
        Self { resolution: [64, 32, 64], bbox_min: min, bbox_max: max, density_logit: -5.0, sh_noise: 0.0 }
    }
}

pub fn init_field(init: &FieldInit, seed: u64) -> Result<VoxelRadianceField, FieldError> {
    let mut field = VoxelRadianceField::new(init.resolution, Aabb::new(init.bbox_min, init.bbox_max)?)?;
    field.density_params_mut().fill(init.density_logit);
    if init.sh_noise > 0.0 {
        let normal = Normal::new(0.0, init.sh_noise).map_err(|e| FieldError::Invalid(format!("sh_noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, c) in field.color_params_mut().iter_mut().enumerate() {
            if i % SH_COEFFS != 0 {
                *c = normal.sample(&mut rng);
            }
        }
    }
    Ok(field)
}

/// Losses of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub loss: f64,
    pub loss_c: f64,
    pub loss_pl: Option<f64>,
}

/// Accumulates the gradient of `L = (L_c + L_pl) / 2` (or `L_c` alone when
/// `pseudo` is empty) into `grads`.
pub fn combined_loss<R: Rng + ?Sized>(
    field: &VoxelRadianceField,
    train_rays: &[Ray],
    train_targets: &[Rgb],
    pseudo: &[PseudoRay],
    opts: &RenderOptions,
    grads: &mut Gradients,
    rng: &mut R,
) -> Result<StepLoss, FieldError> {
    if train_rays.is_empty() {
        return Err(FieldError::EmptyBatch);
    }
    let half = if pseudo.is_empty() { 1.0 } else { 0.5 };
    let nc = train_rays.len() as f64;
    let loss_c = accumulate_gradients(field, train_rays, train_targets, opts, half / nc, grads, rng)? / nc;
    if pseudo.is_empty() {
        return Ok(StepLoss { loss: loss_c, loss_c, loss_pl: None });
    }
    let rays: Vec<Ray> = pseudo.iter().map(|p| p.ray).collect();
    let targets: Vec<Rgb> = pseudo.iter().map(|p| p.color).collect();
    let npl = pseudo.len() as f64;
    let loss_pl = accumulate_gradients(field, &rays, &targets, opts, 0.5 / npl, grads, rng)? / npl;
    Ok(StepLoss { loss: 0.5 * (loss_c + loss_pl), loss_c, loss_pl: Some(loss_pl) })
}

/// Pseudo rays of a full label, restricted to `pixels` when given (in that
/// order), otherwise every masked pixel in raster order.
pub fn label_rays(label: &PseudoLabel, k: &crate::geometry::Intrinsics, pixels: Option<&[(u32, u32)]>) -> Vec<PseudoRay> {
    let ray = |u: u32, v: u32| PseudoRay {
        pixel: (u, v),
        ray: pixel_to_ray(&label.target_pose, k, u as f64, v as f64),
        color: label.image.get(u, v),
    };
    match pixels {
        Some(px) => px.iter().filter(|&&(u, v)| label.mask.get(u, v)).map(|&(u, v)| ray(u, v)).collect(),
        None => label.supervised_pixels().into_iter().map(|(u, v, _)| ray(u, v)).collect(),
    }
}

/// `count` (view, pixel) pairs drawn uniformly with replacement over all training pixels.
pub fn sample_training_batch<R: Rng + ?Sized>(ds: &Dataset, train: &[usize], count: usize, rng: &mut R) -> (Vec<Ray>, Vec<Rgb>) {
    let k = ds.intrinsics();
    let per_view = k.pixel_count();
    let mut rays = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.gen_range(0..train.len() * per_view);
        let frame = train[idx / per_view];
        let p = (idx % per_view) as u32;
        let (u, v) = (p % k.width, p / k.width);
        rays.push(pixel_to_ray(ds.pose(frame), k, u as f64, v as f64));
        targets.push(ds.images[frame].get(u, v));
    }
    (rays, targets)
}

/// Every pixel of one training view.
fn full_view_batch(ds: &Dataset, frame: usize) -> (Vec<Ray>, Vec<Rgb>) {
    let k = ds.intrinsics();
    let mut rays = Vec::with_capacity(k.pixel_count());
    for v in 0..k.height {
        for u in 0..k.width {
            rays.push(pixel_to_ray(ds.pose(frame), k, u as f64, v as f64));
        }
    }
    (rays, ds.images[frame].pixels().to_vec())
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    field: VoxelRadianceField,
    opt: OptimizerState,
    grads: Gradients,
    rng: ChaCha8Rng,
    report: TrainReport,
    started: Instant,
}

impl<'a> Loop<'a> {
    fn new(field: &VoxelRadianceField, cfg: &'a TrainConfig) -> Self {
        Self {
            cfg,
            field: field.clone(),
            opt: OptimizerState::new(field),
            grads: Gradients::zeros_like(field),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            report: TrainReport::new(cfg),
            started: Instant::now(),
        }
    }

    fn step(
        &mut self,
        train: (Vec<Ray>, Vec<Rgb>),
        pseudo: &[PseudoRay],
        valid_fraction: Option<f64>,
    ) -> Result<(), TrainError> {
        let iteration = self.report.records.len();
        self.grads.clear();
        let loss = match combined_loss(&self.field, &train.0, &train.1, pseudo, &self.cfg.render, &mut self.grads, &mut self.rng) {
            Ok(l) if l.loss.is_finite() => l,
            Ok(_) | Err(FieldError::Divergence { .. }) => return Err(self.diverged(iteration)),
            Err(e) => return Err(e.into()),
        };
        self.opt.apply(&mut self.field, &self.grads, self.cfg);
        self.report.records.push(IterationRecord {
            iteration,
            loss: loss.loss,
            loss_c: loss.loss_c,
            loss_pl: loss.loss_pl,
            pseudo_rays: pseudo.len(),
            valid_fraction,
        });
        Ok(())
    }

    fn diverged(&mut self, iteration: usize) -> TrainError {
        let mut report = std::mem::replace(&mut self.report, TrainReport::new(self.cfg));
        report.wall_time_seconds = self.started.elapsed().as_secs_f64();
        TrainError::Divergence { iteration, report: Box::new(report) }
    }

    fn finish(mut self) -> (VoxelRadianceField, TrainReport) {
        self.report.wall_time_seconds = self.started.elapsed().as_secs_f64();
        (self.field, self.report)
    }
}

fn check_dataset(ds: &Dataset) -> Result<Vec<usize>, TrainError> {
    let train = ds.train_indices();
    if train.len() < 2 {
        return Err(TrainError::TooFewViews(train.len()));
    }
    Ok(train)
}

/// Plain reconstruction: random training rays, Adam on the mean squared error.
pub fn train_baseline(
    field: &VoxelRadianceField,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    cfg.validate()?;
    let train = check_dataset(ds)?;
    let mut lp = Loop::new(field, cfg);
    for _ in 0..cfg.iterations {
        let batch = sample_training_batch(ds, &train, cfg.batch_size, &mut lp.rng);
        lp.step(batch, &[], None)?;
    }
    Ok(lp.finish())
}

/// Fine-tuning on a fresh random close-up pose every iteration, half the
/// batch from its masked pseudo-label and half from the training views.
pub fn finetune_diverse(
    field: &VoxelRadianceField,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    cfg.validate()?;
    let train = check_dataset(ds)?;
    let frozen = field.clone();
    let mut lp = Loop::new(field, cfg);
    let n_pl = cfg.batch_size / 2;
    let n_c = cfg.batch_size - n_pl;
    let mut depths = TrainingDepths::render(&frozen, ds, &cfg.render, &cfg.closeup);
    for it in 0..cfg.iterations {
        if !cfg.freeze_depth_field && it > 0 && it % cfg.depth_refresh_interval == 0 {
            depths = TrainingDepths::render(&lp.field, ds, &cfg.render, &cfg.closeup);
        }
        let depth_field = if cfg.freeze_depth_field { &frozen } else { &lp.field };
        let target = generate_closeup_pose(depth_field, ds, &cfg.closeup, &cfg.render, &mut lp.rng)?;
        let pseudo =
            pseudo_ray_batch(depth_field, ds, &depths, &target, n_pl, &cfg.closeup, &cfg.render, &mut lp.rng);
        let fraction = pseudo.len() as f64 / n_pl.min(ds.intrinsics().pixel_count()) as f64;
        let batch = sample_training_batch(ds, &train, n_c, &mut lp.rng);
        lp.step(batch, &pseudo, Some(fraction))?;
    }
    Ok(lp.finish())
}

/// Fine-tuning with one full pseudo-label and one full training image per iteration.
pub fn finetune_fullimage(
    field: &VoxelRadianceField,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    cfg.validate()?;
    let train = check_dataset(ds)?;
    let frozen = field.clone();
    let mut lp = Loop::new(field, cfg);
    let k = *ds.intrinsics();
    let mut depths = TrainingDepths::render(&frozen, ds, &cfg.render, &cfg.closeup);
    for it in 0..cfg.iterations {
        if !cfg.freeze_depth_field && it > 0 && it % cfg.depth_refresh_interval == 0 {
            depths = TrainingDepths::render(&lp.field, ds, &cfg.render, &cfg.closeup);
        }
        let depth_field = if cfg.freeze_depth_field { &frozen } else { &lp.field };
        let mut label = None;
        let mut last_err = None;
        for _ in 0..=cfg.max_label_retries {
            let target = generate_closeup_pose(depth_field, ds, &cfg.closeup, &cfg.render, &mut lp.rng)?;
            match build_pseudo_label(depth_field, ds, &depths, &target, &cfg.closeup, &cfg.render) {
                Ok(l) => {
                    label = Some(l);
                    break;
                }
                Err(e @ PseudoError::LabelRejected { .. }) => last_err = Some(e),
                Err(e) => return Err(e.into()),
            }
        }
        let Some(label) = label else {
            return Err(last_err.expect("retry loop ran").into());
        };
        let pseudo = label_rays(&label, &k, None);
        let frame = train[lp.rng.gen_range(0..train.len())];
        lp.step(full_view_batch(ds, frame), &pseudo, Some(label.valid_fraction))?;
    }
    Ok(lp.finish())
}

/// Labels for user-chosen poses, each from its best-overlapping training view.
/// Poses without overlap come back as skipped outcomes.
pub fn build_testtime_labels(
    field: &VoxelRadianceField,
    ds: &Dataset,
    test_poses: &[Pose],
    cfg: &TrainConfig,
) -> Result<(Vec<PseudoLabel>, Vec<PoseOutcome>), TrainError> {
    let k = ds.intrinsics();
    let depths = TrainingDepths::render(field, ds, &cfg.render, &cfg.closeup);
    let mut labels = Vec::new();
    let mut outcomes = Vec::new();
    for (index, pose) in test_poses.iter().enumerate() {
        let source = match select_source_view(&depths, pose, k) {
            Ok(s) => s,
            Err(PseudoError::NoOverlap) => {
                outcomes.push(PoseOutcome { index, source_index: None, valid_fraction: None, skipped: Some("no overlap".into()) });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let label = build_label_for_pose(field, ds, &depths, pose, source, &cfg.closeup, &cfg.render)?;
        let valid_fraction = Some(label.valid_fraction);
        if label.valid_fraction < cfg.closeup.min_mask_fraction {
            outcomes.push(PoseOutcome { index, source_index: Some(source), valid_fraction, skipped: Some("label rejected".into()) });
            continue;
        }
        outcomes.push(PoseOutcome { index, source_index: Some(source), valid_fraction, skipped: None });
        labels.push(label);
    }
    Ok((labels, outcomes))
}

/// Brief fine-tuning targeted at `test_poses`, with labels built once from
/// the input field. Runs `iterations_per_view` steps per usable pose.
pub fn finetune_testtime(
    field: &VoxelRadianceField,
    ds: &Dataset,
    test_poses: &[Pose],
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    finetune_testtime_with_progress(field, ds, test_poses, cfg, |_, _| {})
}

/// As [`finetune_testtime`], calling `progress(done, total)` after each step.
pub fn finetune_testtime_with_progress(
    field: &VoxelRadianceField,
    ds: &Dataset,
    test_poses: &[Pose],
    cfg: &TrainConfig,
    progress: impl FnMut(usize, usize),
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    cfg.validate()?;
    if test_poses.is_empty() {
        return Err(TrainError::InvalidConfig("no test poses given".into()));
    }
    check_dataset(ds)?;
    let (labels, outcomes) = build_testtime_labels(field, ds, test_poses, cfg)?;
    finetune_on_labels(field, ds, &labels, outcomes, cfg, progress)
}

/// Test-time optimization on labels that were already built, e.g. by
/// [`build_testtime_labels`].
pub fn finetune_on_labels(
    field: &VoxelRadianceField,
    ds: &Dataset,
    labels: &[PseudoLabel],
    outcomes: Vec<PoseOutcome>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    cfg.validate()?;
    let train = check_dataset(ds)?;
    let mut lp = Loop::new(field, cfg);
    lp.report.poses = outcomes;
    if labels.is_empty() {
        let mut report = lp.finish().1;
        report.records.clear();
        return Err(TrainError::NoUsablePoses { report: Box::new(report) });
    }
    let k = *ds.intrinsics();
    let pool: Vec<PseudoRay> = labels.iter().flat_map(|l| label_rays(l, &k, None)).collect();
    let mean_fraction = labels.iter().map(|l| l.valid_fraction).sum::<f64>() / labels.len() as f64;
    let n_pl = cfg.batch_size / 2;
    let n_c = cfg.batch_size - n_pl;
    let total = cfg.iterations_per_view * labels.len();
    for it in 0..total {
        let pseudo: Vec<PseudoRay> = if pool.len() <= n_pl {
            pool.clone()
        } else {
            sample_indices(&mut lp.rng, pool.len(), n_pl).into_iter().map(|i| pool[i]).collect()
        };
        let batch = sample_training_batch(ds, &train, n_c, &mut lp.rng);
        lp.step(batch, &pseudo, Some(mean_fraction))?;
        progress(it + 1, total);
    }
    Ok(lp.finish())
}

/// Dispatches on `cfg.mode`. Test-time mode needs `test_poses`.
pub fn run(
    field: &VoxelRadianceField,
    ds: &Dataset,
    test_poses: &[Pose],
    cfg: &TrainConfig,
) -> Result<(VoxelRadianceField, TrainReport), TrainError> {
    match cfg.mode {
        TrainMode::Baseline => train_baseline(field, ds, cfg),
        TrainMode::FinetuneDiverse => finetune_diverse(field, ds, cfg),
        TrainMode::FinetuneFullimage => finetune_fullimage(field, ds, cfg),
        TrainMode::FinetuneTesttime => finetune_testtime(field, ds, test_poses, cfg),
    }
}
