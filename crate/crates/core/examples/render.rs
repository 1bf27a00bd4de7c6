//! Volume rendering: a hand-built field, a two-sample composite, and a full frame.

use nearview::data::{make_benchmark, BenchmarkConfig};
use nearview::field::{composite, render_image, Aabb, RenderOptions, SampleRecord, VoxelRadianceField};
use nearview::geometry::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two samples: half-transparent red, then a nearly opaque blue.
    let mut samples = vec![
        SampleRecord::new(1.0, 1.0, std::f64::consts::LN_2, [1.0, 0.0, 0.0]),
        SampleRecord::new(2.0, 1.0, 20.0, [0.0, 0.0, 1.0]),
    ];
    let r = composite(&mut samples, [1.0; 3]);
    println!("composite color {:?}, depth {:.6}, transmittance {:.3e}", r.color, r.depth, r.final_transmittance);

    // A dense block in the middle of an empty grid.
    let mut field = VoxelRadianceField::new([16, 16, 16], Aabb::new([-1.0; 3], [1.0; 3])?)?;
    let res = field.resolution();
    for k in 0..res[2] {
        for j in 0..res[1] {
            for i in 0..res[0] {
                let p = field.vertex_position(i, j, k);
                let inside = p.abs().max() < 0.5;
                let idx = field.vertex_index(i, j, k);
                field.density_params_mut()[idx] = if inside { 4.0 } else { -8.0 };
            }
        }
    }
    let cfg = BenchmarkConfig { width: 64, height: 36, ..Default::default() };
    let k = cfg.intrinsics()?;
    let pose = nearview::geometry::Pose::look_at(Vec3::new(0.0, 1.0, -3.0), Vec3::zeros(), Vec3::y())?;
    let img = render_image(&field, &pose, &k, &RenderOptions::default(), 0);
    let covered = img.opacity.iter().filter(|&&a| a > 0.5).count();
    println!("block covers {covered} of {} pixels", k.pixel_count());

    let out = std::env::temp_dir().join("nearview-render");
    std::fs::create_dir_all(&out)?;
    img.rgb.save_png(&out.join("block.png"))?;
    let bench = make_benchmark(0, &cfg)?;
    bench.dataset.images[0].save_png(&out.join("oracle_train_000.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
