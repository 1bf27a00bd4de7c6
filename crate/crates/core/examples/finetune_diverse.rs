//! Baseline training followed by fine-tuning on random close-up pseudo-labels.

use nearview::data::{make_benchmark, BenchmarkConfig, Split};
use nearview::field::RenderOptions;
use nearview::metrics::evaluate;
use nearview::training::{finetune_diverse, init_field, train_baseline, FieldInit, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 16, n_val: 2, n_test: 4, ..Default::default() };
    let ds = make_benchmark(5, &cfg)?.dataset;
    let background = ds.manifest.background.unwrap_or([1.0; 3]);
    let eval = RenderOptions { background, ..RenderOptions::default() };
    let score = |f, split| evaluate(f, &ds, split, &eval, 0).map(|r| r.mean_psnr.unwrap());

    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, 5)?;
    let mut base = TrainConfig { iterations: 800, batch_size: 1024, seed: 5, ..TrainConfig::for_mode(TrainMode::Baseline) };
    base.render.background = background;
    let (field, _) = train_baseline(&init, &ds, &base)?;

    let mut ft = TrainConfig { iterations: 400, batch_size: 1024, seed: 5, ..TrainConfig::for_mode(TrainMode::FinetuneDiverse) };
    ft.render.background = background;
    let (tuned, report) = finetune_diverse(&field, &ds, &ft)?;
    let used = report.records.iter().map(|r| r.pseudo_rays).sum::<usize>();
    println!("fine-tuning used {used} pseudo rays over {} iterations", report.records.len());

    for split in [Split::Val, Split::Test] {
        println!("{split:?}: {:.2} dB -> {:.2} dB", score(&field, split)?, score(&tuned, split)?);
    }
    Ok(())
}
