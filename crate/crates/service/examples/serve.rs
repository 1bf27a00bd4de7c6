//! Serves a briefly trained field on a small benchmark.
//!
//!     cargo run --release -p nearview-service --example serve -- [port]
//!
//! Then, for instance:
//!
//!     curl localhost:8080/api/state
//!     curl -X POST localhost:8080/api/render -H 'content-type: application/json' \
//!          -d '{"pose": [1,0,0,0, 0,1,0,0, 0,0,1,-6], "quality": "full"}'

use std::net::SocketAddr;

use nearview::data::{make_benchmark, BenchmarkConfig};
use nearview::training::{init_field, train_baseline, FieldInit, TrainConfig};
use nearview_service::{serve, AppState, ServiceConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let port: u16 = std::env::args().nth(1).map(|p| p.parse()).transpose()?.unwrap_or(8080);
    let cfg = BenchmarkConfig { width: 96, height: 54, n_train: 16, n_val: 0, n_test: 0, ..Default::default() };
    let ds = make_benchmark(0, &cfg)?.dataset;
    let background = ds.manifest.background.unwrap_or([1.0; 3]);

    let mut train = TrainConfig { iterations: 300, batch_size: 1024, ..TrainConfig::default() };
    train.render.background = background;
    let init = init_field(&FieldInit { resolution: [32, 16, 32], ..Default::default() }, 0)?;
    let field = tokio::task::spawn_blocking(move || train_baseline(&init, &ds, &train).map(|(f, _)| (f, ds))).await??;

    let mut config = ServiceConfig { permissive_cors: true, ..Default::default() };
    config.render.background = background;
    config.train.render.background = background;
    let app = AppState::new(config);
    app.load(field.0, field.1, "example");

    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    eprintln!("listening on http://{addr}");
    serve(app, addr).await?;
    Ok(())
}
