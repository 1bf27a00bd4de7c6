//! PSNR and SSIM between a checkerboard and degraded copies of it.

use nearview::metrics::{psnr, ssim};
use nearview::raster::Image;

fn checker(w: u32, h: u32, cell: u32) -> Image {
    let px = (0..w * h)
        .map(|i| if ((i % w) / cell + (i / w) / cell) % 2 == 0 { [0.85, 0.8, 0.75] } else { [0.15, 0.2, 0.1] })
        .collect();
    Image::from_pixels(w, h, px)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = checker(64, 48, 5);
    let noisy = Image::from_pixels(
        64,
        48,
        reference.pixels().iter().enumerate().map(|(i, p)| p.map(|c| (c + 0.03 * ((i * 7919 % 13) as f64 / 6.0 - 1.0)).clamp(0.0, 1.0))).collect(),
    );
    let blurred = reference.downsample2();
    let blurred = Image::from_pixels(64, 48, (0..64 * 48).map(|i| blurred.get((i % 64) / 2, (i / 64) / 2)).collect());
    let shifted = checker(64, 48, 6);

    for (name, img) in [("identical", &reference), ("noisy", &noisy), ("down/up", &blurred), ("wrong cell", &shifted)] {
        println!("{name:>10}: PSNR {:>7.2} dB  SSIM {:.4}", psnr(&reference, img)?, ssim(&reference, img)?);
    }
    Ok(())
}
