//! Generates a synthetic benchmark and writes it as a manifest plus PNGs.
//!
//!     cargo run --release --example benchmark -- [out_dir] [seed]

use std::path::PathBuf;

use nearview::data::{load_manifest, make_benchmark, save_manifest, BenchmarkConfig, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nearview-benchmark"));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 12, n_val: 2, n_test: 4, ..Default::default() };
    let bench = make_benchmark(seed, &cfg)?;
    let manifest = out.join("manifest.json");
    save_manifest(&bench.dataset, &manifest)?;

    let ds = load_manifest(&manifest)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {} views", ds.indices(split).len());
    }
    for (i, info) in bench.test_info.iter().enumerate() {
        println!("test {i}: close-up of train view {} at lambda {:.2}", info.source_frame, info.lambda);
    }
    println!("{} primitives, written to {}", bench.scene.primitives.len(), manifest.display());
    Ok(())
}
