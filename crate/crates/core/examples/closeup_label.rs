//! Draws a random close-up pose and builds its masked pseudo-label.
//!
//! The label directory holds the warped image, the forward-warp aggregate,
//! the consistency mask and the masked label.

use nearview::data::{make_benchmark, BenchmarkConfig};
use nearview::pseudo::{build_pseudo_label, generate_closeup_pose, CloseupConfig, TrainingDepths};
use nearview::training::{init_field, train_baseline, FieldInit, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 16, n_val: 0, n_test: 0, ..Default::default() };
    let ds = make_benchmark(2, &cfg)?.dataset;
    let mut train = TrainConfig { iterations: 1000, batch_size: 1024, ..TrainConfig::default() };
    train.render.background = ds.manifest.background.unwrap_or([1.0; 3]);
    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, 0)?;
    let (field, _) = train_baseline(&init, &ds, &train)?;

    let closeup = CloseupConfig { min_mask_fraction: 0.0, ..Default::default() };
    let opts = train.render.without_jitter();
    let depths = TrainingDepths::render(&field, &ds, &opts, &closeup);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let out = std::env::temp_dir().join("nearview-labels");
    for i in 0..3 {
        let target = generate_closeup_pose(&field, &ds, &closeup, &opts, &mut rng)?;
        let label = build_pseudo_label(&field, &ds, &depths, &target, &closeup, &opts)?;
        println!(
            "label {i}: source view {}, lambda {:.2}, {:.1}% of pixels supervised",
            target.source_index,
            target.lambda,
            100.0 * label.valid_fraction
        );
        label.dump(&out.join(format!("label_{i:03}")), Some(target.lambda))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
