//! Test-time fine-tuning: labels are built for the known test poses only.

use nearview::data::{make_benchmark, BenchmarkConfig, Split};
use nearview::field::RenderOptions;
use nearview::metrics::evaluate;
use nearview::training::{finetune_testtime_with_progress, init_field, train_baseline, FieldInit, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 16, n_val: 0, n_test: 4, ..Default::default() };
    let ds = make_benchmark(3, &cfg)?.dataset;
    let background = ds.manifest.background.unwrap_or([1.0; 3]);

    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, 3)?;
    let mut base = TrainConfig { iterations: 800, batch_size: 1024, seed: 3, ..TrainConfig::for_mode(TrainMode::Baseline) };
    base.render.background = background;
    let (field, _) = train_baseline(&init, &ds, &base)?;

    let test = ds.indices(Split::Test);
    let poses: Vec<_> = test.iter().map(|&i| *ds.pose(i)).collect();
    let mut tt = TrainConfig { seed: 3, ..TrainConfig::for_mode(TrainMode::FinetuneTesttime) };
    tt.render.background = background;
    let (tuned, report) = finetune_testtime_with_progress(&field, &ds, &poses, &tt, |done, total| {
        if done == total {
            eprintln!("{done}/{total} steps");
        }
    })?;
    for p in &report.poses {
        match &p.skipped {
            Some(why) => println!("pose {}: skipped ({why})", p.index),
            None => println!("pose {}: source view {:?}, mask {:.1}%", p.index, p.source_index, 100.0 * p.valid_fraction.unwrap()),
        }
    }

    let eval = RenderOptions { background, ..RenderOptions::default() };
    let (before, after) = (evaluate(&field, &ds, Split::Test, &eval, 0)?, evaluate(&tuned, &ds, Split::Test, &eval, 0)?);
    for (a, b) in before.views.iter().zip(&after.views) {
        println!("frame {}: {:.2} dB -> {:.2} dB", a.frame, a.psnr, b.psnr);
    }
    Ok(())
}
