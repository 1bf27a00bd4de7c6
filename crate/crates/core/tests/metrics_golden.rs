//! Metric values frozen from an independent implementation (tests/oracles/metrics_golden.py).

use nearview::metrics::{mse, psnr, ssim, MetricsError};
use nearview::raster::Image;
use proptest::prelude::*;

const W: u32 = 32;
const H: u32 = 24;

fn image(f: impl Fn(u32, u32, u32) -> f64) -> Image {
    let pixels = (0..H).flat_map(|v| (0..W).map(move |u| (u, v))).map(|(u, v)| [f(u, v, 0), f(u, v, 1), f(u, v, 2)]);
    Image::from_pixels(W, H, pixels.collect())
}

fn img_a() -> Image {
    image(|u, v, c| ((u * 7 + v * 13 + c * 29) % 17) as f64 / 16.0)
}
fn img_b() -> Image {
    image(|u, v, c| ((u * 5 + v * 3 + c * 11 + u * v) % 23) as f64 / 22.0)
}
fn img_smooth() -> Image {
    image(|u, v, c| ((u + 2 * v + 3 * c) % 40) as f64 / 50.0 + 0.1)
}
fn img_near() -> Image {
    image(|u, v, c| 0.9 * (((u * 7 + v * 13 + c * 29) % 17) as f64 / 16.0) + 0.05 + ((u * 3 + v + c) % 5) as f64 / 100.0)
}

#[test]
fn psnr_and_ssim_match_reference_values() {
    let cases = [
        ("a_b", img_a(), img_b(), 7.4425836536427472833, 0.019485021237869),
        ("a_smooth", img_a(), img_smooth(), 8.4033789204219306503, 0.027247841804173),
        ("smooth_b", img_smooth(), img_b(), 8.592455400890534227, 0.053044646882574),
        ("a_near", img_a(), img_near(), 28.048378857896172315, 0.990925794931758),
    ];
    for (name, x, y, p, s) in cases {
        let got_p = psnr(&x, &y).unwrap();
        let got_s = ssim(&x, &y).unwrap();
        assert!((got_p - p).abs() < 1e-9, "{name}: psnr {got_p} vs {p}");
        assert!((got_s - s).abs() < 1e-6, "{name}: ssim {got_s} vs {s}");
    }
}

#[test]
fn identical_images() {
    let a = img_a();
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn shape_errors() {
    let small = Image::new(8, 8, [0.5; 3]);
    assert!(matches!(psnr(&img_a(), &small), Err(MetricsError::ShapeMismatch { .. })));
    assert_eq!(ssim(&small, &small), Err(MetricsError::TooSmall((8, 8))));
}

fn arb_pair() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let px = || prop::array::uniform3(0.0f64..=1.0);
    (prop::collection::vec(px(), 16 * 14), prop::collection::vec(px(), 16 * 14))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric((p, q) in arb_pair()) {
        let (a, b) = (Image::from_pixels(16, 14, p), Image::from_pixels(16, 14, q));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn mse_ignores_pixel_order((p, q) in arb_pair(), shift in 1usize..200) {
        let a = Image::from_pixels(16, 14, p.clone());
        let b = Image::from_pixels(16, 14, q.clone());
        let (mut p2, mut q2) = (p, q);
        p2.rotate_left(shift);
        q2.rotate_left(shift);
        let m1 = mse(&a, &b).unwrap();
        let m2 = mse(&Image::from_pixels(16, 14, p2), &Image::from_pixels(16, 14, q2)).unwrap();
        prop_assert!((m1 - m2).abs() <= 1e-12 * m1.max(1e-300));
    }
}
