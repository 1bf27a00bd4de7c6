//! Trains a baseline field on a small benchmark, scores it and saves a checkpoint.

use nearview::data::{make_benchmark, BenchmarkConfig, Split};
use nearview::field::{RenderOptions, VoxelRadianceField};
use nearview::metrics::evaluate;
use nearview::training::{init_field, train_baseline, FieldInit, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 16, n_val: 2, n_test: 4, ..Default::default() };
    let ds = make_benchmark(1, &cfg)?.dataset;
    let background = ds.manifest.background.unwrap_or([1.0; 3]);

    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, 1)?;
    let mut train = TrainConfig { iterations: 600, batch_size: 1024, ..TrainConfig::for_mode(TrainMode::Baseline) };
    train.render.background = background;
    let (field, report) = train_baseline(&init, &ds, &train)?;
    println!("loss {:.5} -> {:.5} in {:.1} s", report.records[0].loss, report.final_loss().unwrap(), report.wall_time_seconds);

    let eval = RenderOptions { background, ..RenderOptions::default() };
    for split in [Split::Train, Split::Val, Split::Test] {
        let r = evaluate(&field, &ds, split, &eval, 0)?;
        println!("{split:?}: PSNR {:.2} dB, SSIM {:.3}", r.mean_psnr.unwrap(), r.mean_ssim.unwrap());
    }

    let path = std::env::temp_dir().join("nearview-baseline.ckpt");
    field.save(&path)?;
    assert_eq!(VoxelRadianceField::load(&path)?, field);
    println!("checkpoint: {}", path.display());
    Ok(())
}
