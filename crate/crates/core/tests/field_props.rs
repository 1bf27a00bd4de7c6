mod common;

use common::*;
use nearview::field::{composite, render_ray, render_ray_with, RenderOptions, SampleRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    let field = random_field([5, 4, 6], 11);
    let rays = random_rays(5, 12);
    let out = finite_difference_check(&field, &rays, 40, 1e-4);
    assert!(out.checked >= 20);
    assert!(out.worst_relative_error < 1e-4, "worst relative error {}", out.worst_relative_error);
}

#[test]
fn rendering_is_deterministic() {
    let field = random_field([6, 6, 6], 3);
    let opts = RenderOptions { stratified_jitter: true, ..RenderOptions::default() };
    for ray in random_rays(50, 4) {
        let a = render_ray_with(&field, &ray, &opts, &mut ChaCha8Rng::seed_from_u64(9));
        let b = render_ray_with(&field, &ray, &opts, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}

#[test]
fn render_is_bounded_by_its_inputs() {
    let field = random_field([6, 6, 6], 5);
    let opts = RenderOptions { background: [0.0, 0.5, 1.0], ..RenderOptions::default() };
    for ray in random_rays(500, 6) {
        let r = render_ray(&field, &ray, &opts);
        assert!(r.color.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!((0.0..=1.0).contains(&r.opacity));
        assert!((r.opacity + r.final_transmittance - 1.0).abs() < 1e-12);
    }
}

fn arb_samples() -> impl Strategy<Value = Vec<(f64, f64, [f64; 3])>> {
    prop::collection::vec((0.001f64..2.0, 0.0f64..50.0, prop::array::uniform3(0.0f64..=1.0)), 1..40)
}

fn records(s: &[(f64, f64, [f64; 3])]) -> Vec<SampleRecord> {
    let mut t = 0.0;
    s.iter()
        .map(|&(delta, sigma, c)| {
            t += delta;
            SampleRecord::new(t - delta / 2.0, delta, sigma, c)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_and_transmittance_partition_unity(s in arb_samples()) {
        let mut recs = records(&s);
        let r = composite(&mut recs, [0.0; 3]);
        let total: f64 = recs.iter().map(|x| x.weight).sum();
        prop_assert!((total + r.final_transmittance - 1.0).abs() < 1e-12);
        prop_assert!(recs.iter().all(|x| x.weight >= 0.0));
        for pair in recs.windows(2) {
            prop_assert!(pair[1].transmittance <= pair[0].transmittance);
        }
    }

    #[test]
    fn splitting_a_sample_leaves_the_render_unchanged(s in arb_samples(), which in 0usize..40) {
        let mut whole = records(&s);
        let i = which % whole.len();
        let x = whole[i];
        let mut split = whole.clone();
        let half = x.delta / 2.0;
        split[i] = SampleRecord::new(x.t - half / 2.0, half, x.sigma, x.color);
        split.insert(i + 1, SampleRecord::new(x.t + half / 2.0, half, x.sigma, x.color));
        let bg = [0.2, 0.4, 0.6];
        let a = composite(&mut whole, bg);
        let b = composite(&mut split, bg);
        for c in 0..3 {
            prop_assert!((a.color[c] - b.color[c]).abs() < 1e-12);
        }
        prop_assert!((a.final_transmittance - b.final_transmittance).abs() < 1e-12);
    }

    #[test]
    fn zero_density_shows_the_background(s in arb_samples(), bg in prop::array::uniform3(0.0f64..=1.0)) {
        let mut recs: Vec<SampleRecord> = records(&s).into_iter().map(|x| SampleRecord::new(x.t, x.delta, 0.0, x.color)).collect();
        let r = composite(&mut recs, bg);
        prop_assert_eq!(r.color, bg);
        prop_assert_eq!(r.opacity, 0.0);
    }
}
