//! The `nearview` command line: one subcommand per pipeline stage.
//!
//! Every subcommand writes its artifacts under `--out` and nothing to
//! stdout; progress goes to stderr. Exit codes: 1 usage, 2 bad input,
//! 3 numeric failure.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nearview::data::{load_manifest, make_benchmark, save_manifest, BenchmarkConfig, DataError, Dataset, Split};
use nearview::field::{render_image, FieldError, VoxelRadianceField};
use nearview::geometry::Pose;
use nearview::metrics::{evaluate_frames, MetricsError};
use nearview::pseudo::{build_pseudo_label, generate_closeup_pose, select_source_view, build_label_for_pose, PseudoError, TrainingDepths};
use nearview::training::{finetune_testtime_with_progress, init_field, run, TrainConfig, TrainError, TrainMode, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use config::RunConfig;

pub const CHECKPOINT_FILE: &str = "field.ckpt";
pub const REPORT_FILE: &str = "report.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Divergence { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PseudoError> for CliError {
    fn from(e: PseudoError) -> Self {
        match e {
            PseudoError::SceneNotReady { .. } | PseudoError::LabelRejected { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainError::Pseudo(p) => p.into(),
            TrainError::Field(f) => f.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "nearview", version, about = "Radiance fields with pseudo-label fine-tuning for close-up views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark (manifest, images, scene, close-up provenance).
    MakeSynthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Train a field from scratch (or from --checkpoint) on the training views.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Fine-tune with pseudo-labels at random close-up poses (--mode diverse or fullimage).
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Briefly fine-tune toward specific poses (test split by default).
    FinetuneTesttime {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        views: Views,
    },
    /// Render RGB and depth for dataset views or explicit poses.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        views: Views,
    },
    /// Write pseudo-labels, aggregates and masks as images plus a JSON sidecar.
    PseudoDump {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        views: Views,
        /// Number of random close-up labels when no frames are given.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score a checkpoint on a split (PSNR and SSIM per view).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        views: Views,
    },
    /// Serve the HTTP API for the viewer.
    Serve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        port: Option<u16>,
        /// Send permissive CORS headers.
        #[arg(long)]
        cors: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Field checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    /// baseline, diverse, fullimage or testtime.
    #[arg(long)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Euler-angle offset bound, radians.
    #[arg(long)]
    pub angle_bound: Option<f64>,
    /// Per-channel RGB threshold of the consistency mask.
    #[arg(long)]
    pub mask_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Views {
    /// train, val or test.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Comma-separated frame indices.
    #[arg(long, value_delimiter = ',')]
    pub frames: Option<Vec<usize>>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown split {s:?}; use train, val or test"))
}

impl Common {
    fn flags(&self) -> RunConfig {
        RunConfig { seed: self.seed, out: self.out.clone(), ..Default::default() }
    }
}

impl Inputs {
    fn apply(&self, rc: &mut RunConfig) {
        rc.dataset = self.dataset.clone();
        rc.checkpoint = self.checkpoint.clone();
    }
}

impl TrainFlags {
    fn apply(&self, rc: &mut RunConfig) {
        rc.iterations = self.iterations;
        rc.mode = self.mode;
        rc.lambda_min = self.lambda_min;
        rc.lambda_max = self.lambda_max;
        rc.angle_bound = self.angle_bound;
        rc.mask_threshold = self.mask_threshold;
    }
}

impl Views {
    fn apply(&self, rc: &mut RunConfig) {
        rc.split = self.split;
        rc.frames = self.frames.clone();
    }
}

/// Config file (if any) overlaid with the flags.
fn resolve(common: &Common, fill: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, CliError> {
    let mut flags = common.flags();
    fill(&mut flags);
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.overlay(flags))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::MakeSynthetic { common } => make_synthetic(&resolve(&common, |_| {})?),
        Command::Train { common, inputs, train } => {
            let rc = resolve(&common, |rc| {
                inputs.apply(rc);
                train.apply(rc);
            })?;
            train_cmd(&rc, TrainMode::Baseline, &[TrainMode::Baseline])
        }
        Command::Finetune { common, inputs, train } => {
            let rc = resolve(&common, |rc| {
                inputs.apply(rc);
                train.apply(rc);
            })?;
            train_cmd(&rc, TrainMode::FinetuneDiverse, &[TrainMode::FinetuneDiverse, TrainMode::FinetuneFullimage])
        }
        Command::FinetuneTesttime { common, inputs, train, views } => {
            let rc = resolve(&common, |rc| {
                inputs.apply(rc);
                train.apply(rc);
                views.apply(rc);
            })?;
            testtime_cmd(&rc)
        }
        Command::Render { common, inputs, views } => render_cmd(&resolve(&common, |rc| {
            inputs.apply(rc);
            views.apply(rc);
        })?),
        Command::PseudoDump { common, inputs, train, views, count } => pseudo_dump(&resolve(&common, |rc| {
            inputs.apply(rc);
            train.apply(rc);
            views.apply(rc);
            rc.count = count;
        })?),
        Command::Eval { common, inputs, views } => eval_cmd(&resolve(&common, |rc| {
            inputs.apply(rc);
            views.apply(rc);
        })?),
        Command::Serve { common, inputs, train, port, cors } => serve_cmd(&resolve(&common, |rc| {
            inputs.apply(rc);
            train.apply(rc);
            rc.port = port;
            rc.cors = cors.then_some(true);
        })?),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn load_dataset(rc: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_manifest(rc.dataset()?)?)
}

fn load_field(path: &Path) -> Result<VoxelRadianceField, CliError> {
    let f = VoxelRadianceField::load(path)?;
    if !f.is_finite() {
        return Err(CliError::Input(format!("{} holds non-finite parameters", path.display())));
    }
    Ok(f)
}

fn make_synthetic(rc: &RunConfig) -> Result<(), CliError> {
    let out = rc.out()?;
    let cfg: BenchmarkConfig = rc.benchmark.clone().unwrap_or_default();
    eprintln!("make-synthetic: seed {}, {}x{}, {} train / {} val / {} test", rc.seed(), cfg.width, cfg.height, cfg.n_train, cfg.n_val, cfg.n_test);
    let b = make_benchmark(rc.seed(), &cfg)?;
    create_dir(out)?;
    save_manifest(&b.dataset, &out.join("manifest.json"))?;
    write(&out.join("scene.json"), to_json(&b.scene))?;
    let test = b.dataset.indices(Split::Test);
    let closeups: Vec<_> = test
        .iter()
        .zip(&b.test_info)
        .map(|(frame, t)| json!({ "frame": frame, "source_frame": t.source_frame, "anchor": [t.anchor.x, t.anchor.y, t.anchor.z], "lambda": t.lambda }))
        .collect();
    write(&out.join("closeups.json"), to_json(&closeups))?;
    eprintln!("make-synthetic: wrote {}", out.display());
    Ok(())
}

fn write_run(out: &Path, field: &VoxelRadianceField, report: &TrainReport, cfg: &TrainConfig) -> Result<(), CliError> {
    create_dir(out)?;
    field.save(&out.join(CHECKPOINT_FILE))?;
    report.write_jsonl(&out.join(REPORT_FILE)).map_err(io_err(&out.join(REPORT_FILE)))?;
    write(&out.join(RUN_FILE), to_json(cfg))
}

fn train_cmd(rc: &RunConfig, default: TrainMode, allowed: &[TrainMode]) -> Result<(), CliError> {
    let mode = rc.mode.unwrap_or(default);
    if !allowed.contains(&mode) {
        let names: Vec<_> = allowed.iter().map(|m| m.name()).collect();
        return Err(CliError::Usage(format!("--mode {} not valid here; use one of {names:?}", mode.name())));
    }
    let out = rc.out()?;
    let ds = load_dataset(rc)?;
    let cfg = rc.train_config(mode, ds.manifest.background)?;
    let field = match (&rc.checkpoint, mode) {
        (Some(p), _) => load_field(p)?,
        (None, TrainMode::Baseline) => init_field(&rc.init.unwrap_or_default(), cfg.seed)?,
        (None, _) => return Err(CliError::Usage("--checkpoint is required for fine-tuning".into())),
    };
    eprintln!("{}: {} iterations, batch {}, seed {}", mode.name(), cfg.iterations, cfg.batch_size, cfg.seed);
    let (tuned, report) = run(&field, &ds, &[], &cfg)?;
    eprintln!(
        "{}: final loss {:.6} after {:.1} s",
        mode.name(),
        report.final_loss().unwrap_or(f64::NAN),
        report.wall_time_seconds
    );
    write_run(out, &tuned, &report, &cfg)
}

/// Poses named by `poses`, `frames`, or `split` (in that order of precedence).
fn target_poses(rc: &RunConfig, ds: &Dataset, default: Split) -> Result<Vec<(Option<usize>, Pose)>, CliError> {
    if let Some(rows) = &rc.poses {
        return rows
            .iter()
            .map(|r| Pose::from_rows(r).map(|p| (None, p)).map_err(|e| CliError::Input(format!("bad pose: {e}"))))
            .collect();
    }
    let frames = match &rc.frames {
        Some(f) => f.clone(),
        None => ds.indices(rc.split.unwrap_or(default)),
    };
    frames
        .into_iter()
        .map(|f| match ds.manifest.frames.get(f) {
            Some(fr) => Ok((Some(f), fr.pose)),
            None => Err(CliError::Input(format!("frame {f} out of range (dataset has {})", ds.manifest.frames.len()))),
        })
        .collect()
}

fn testtime_cmd(rc: &RunConfig) -> Result<(), CliError> {
    let out = rc.out()?;
    let ds = load_dataset(rc)?;
    let field = load_field(rc.checkpoint()?)?;
    let cfg = rc.train_config(TrainMode::FinetuneTesttime, ds.manifest.background)?;
    let poses: Vec<Pose> = target_poses(rc, &ds, Split::Test)?.into_iter().map(|p| p.1).collect();
    eprintln!("finetune-testtime: {} poses, {} iterations each", poses.len(), cfg.iterations_per_view);
    let mut last = 0;
    let (tuned, report) = finetune_testtime_with_progress(&field, &ds, &poses, &cfg, |done, total| {
        if done * 10 / total > last || done == total {
            last = done * 10 / total;
            eprintln!("finetune-testtime: step {done}/{total}");
        }
    })?;
    for p in report.poses.iter().filter(|p| p.skipped.is_some()) {
        eprintln!("finetune-testtime: pose {} skipped ({})", p.index, p.skipped.as_deref().unwrap_or(""));
    }
    write_run(out, &tuned, &report, &cfg)
}

fn render_cmd(rc: &RunConfig) -> Result<(), CliError> {
    let out = rc.out()?;
    let ds = load_dataset(rc)?;
    let field = load_field(rc.checkpoint()?)?;
    let cfg = rc.train_config(TrainMode::Baseline, ds.manifest.background)?;
    let opts = cfg.render.without_jitter();
    let k = *ds.intrinsics();
    create_dir(out)?;
    let mut index = Vec::new();
    for (i, (frame, pose)) in target_poses(rc, &ds, Split::Test)?.into_iter().enumerate() {
        let name = frame.map_or_else(|| format!("pose_{i:03}"), |f| format!("frame_{f:03}"));
        let r = render_image(&field, &pose, &k, &opts, rc.seed());
        r.rgb.save_png(&out.join(format!("{name}.png"))).map_err(|e| CliError::Input(e.to_string()))?;
        r.depth.save_raw(&out.join(format!("{name}.depth"))).map_err(|e| CliError::Input(e.to_string()))?;
        index.push(json!({ "name": name, "frame": frame, "pose": pose }));
        eprintln!("render: {name}");
    }
    write(&out.join("render.json"), to_json(&index))
}

fn pseudo_dump(rc: &RunConfig) -> Result<(), CliError> {
    let out = rc.out()?;
    let ds = load_dataset(rc)?;
    let field = load_field(rc.checkpoint()?)?;
    let cfg = rc.train_config(TrainMode::FinetuneDiverse, ds.manifest.background)?;
    let depths = TrainingDepths::render(&field, &ds, &cfg.render, &cfg.closeup);
    let k = *ds.intrinsics();
    create_dir(out)?;
    if rc.frames.is_some() || rc.poses.is_some() || rc.split.is_some() {
        for (i, (frame, pose)) in target_poses(rc, &ds, Split::Test)?.into_iter().enumerate() {
            let source = select_source_view(&depths, &pose, &k)?;
            let label = build_label_for_pose(&field, &ds, &depths, &pose, source, &cfg.closeup, &cfg.render)?;
            let name = frame.map_or_else(|| format!("pose_{i:03}"), |f| format!("frame_{f:03}"));
            label.dump(&out.join(&name), None)?;
            eprintln!("pseudo-dump: {name} from view {source}, valid fraction {:.3}", label.valid_fraction);
        }
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed());
    for j in 0..rc.count.unwrap_or(4) {
        let target = generate_closeup_pose(&field, &ds, &cfg.closeup, &cfg.render, &mut rng)?;
        let label = match build_pseudo_label(&field, &ds, &depths, &target, &cfg.closeup, &cfg.render) {
            Ok(l) => l,
            Err(PseudoError::LabelRejected { valid_fraction, .. }) => {
                eprintln!("pseudo-dump: label {j} rejected (valid fraction {valid_fraction:.3})");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        label.dump(&out.join(format!("label_{j:03}")), Some(target.lambda))?;
        eprintln!("pseudo-dump: label {j}, lambda {:.2}, valid fraction {:.3}", target.lambda, label.valid_fraction);
    }
    Ok(())
}

fn eval_cmd(rc: &RunConfig) -> Result<(), CliError> {
    let out = rc.out()?;
    let ds = load_dataset(rc)?;
    let field = load_field(rc.checkpoint()?)?;
    let split = rc.split.unwrap_or(Split::Test);
    let frames = rc.frames.clone().unwrap_or_else(|| ds.indices(split));
    if let Some(&f) = frames.iter().find(|&&f| f >= ds.manifest.frames.len()) {
        return Err(CliError::Input(format!("frame {f} out of range")));
    }
    let opts = rc.train_config(TrainMode::Baseline, ds.manifest.background)?.render.without_jitter();
    let report = evaluate_frames(&field, &ds, split, &frames, &opts, rc.seed())?;
    let name = format!("{split:?}").to_lowercase();
    create_dir(out)?;
    write(&out.join(format!("eval_{name}.json")), to_json(&report))?;
    write(&out.join(format!("eval_{name}.csv")), report.to_csv())?;
    match report.mean_psnr {
        Some(p) => eprintln!("eval: {name} mean PSNR {p:.2} dB over {} views", report.views.len()),
        None => eprintln!("eval: {name} split is empty"),
    }
    Ok(())
}

fn serve_cmd(rc: &RunConfig) -> Result<(), CliError> {
    use nearview_service::{serve, AppState, ServiceConfig};
    let ds = load_dataset(rc)?;
    let path = rc.checkpoint()?;
    let field = load_field(path)?;
    let train = rc.train_config(TrainMode::FinetuneTesttime, ds.manifest.background)?;
    let config = ServiceConfig {
        render: train.render.without_jitter(),
        closeup: train.closeup,
        train,
        checkpoint_path: Some(path.to_path_buf()),
        permissive_cors: rc.cors.unwrap_or(false),
        ..ServiceConfig::default()
    };
    let app = AppState::new(config);
    app.load(field, ds, path.display().to_string());
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], rc.port.unwrap_or(8080)));
    eprintln!("serve: listening on http://{addr}");
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Input(e.to_string()))?;
    rt.block_on(serve(app, addr)).map_err(|e| CliError::Input(format!("cannot serve on {addr}: {e}")))
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    match execute(cli) {
        Ok(()) => {
            eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
