mod support;

use nalgebra::Vector3;
use splatcost::gaussian::Gaussian;
use splatcost::raster::render;
use support::*;

#[test]
fn tiled_render_matches_brute_force() {
    for seed in 0..10 {
        let (gaussians, pose, _) = random_scene(100 + seed, 50, 32, 32);
        let tiled = render(&gaussians, &pose, [0.2, 0.1, 0.0]);
        let brute = brute_force_render(&gaussians, &pose, [0.2, 0.1, 0.0]);
        assert!(tiled.max_abs_diff(&brute) <= 1e-6, "seed {seed}: {}", tiled.max_abs_diff(&brute));
    }
}

#[test]
fn single_gaussian_peaks_at_its_center() {
    let pose = identity_pose(64, 64, 100.0);
    let g = Gaussian::isotropic(Vector3::new(0.0, 0.0, 1.0), -3.0, 0.999, [1.0; 3]);
    let img = render(&[g], &pose, [0.0; 3]);
    let brute = brute_force_render(&[g], &pose, [0.0; 3]);
    assert!(img.max_abs_diff(&brute) <= 1e-12);
    let center = img.get(32, 32, 0);
    assert!(img.data.iter().all(|&v| v <= center));
}

#[test]
fn two_layer_blend_matches_closed_form() {
    let pose = identity_pose(16, 16, 20.0);
    let front = Gaussian::isotropic(Vector3::new(0.0, 0.0, 1.0), -1.0, 0.6, [0.9, 0.2, 0.1]);
    let back = Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), -1.0, 0.5, [0.1, 0.7, 0.4]);
    let img = render(&[back, front], &pose, [0.3; 3]);
    // both splats have their peak alpha at the principal point
    let (a1, a2) = (0.6, 0.5);
    for (ch, (c1, c2)) in [(0.9, 0.1), (0.2, 0.7), (0.1, 0.4)].into_iter().enumerate() {
        let want = c1 * a1 + c2 * a2 * (1.0 - a1) + 0.3 * (1.0 - a1) * (1.0 - a2);
        assert!((img.get(8, 8, ch) - want).abs() < 1e-12);
    }
}

#[test]
fn render_is_deterministic_across_thread_counts() {
    let (gaussians, pose, target) = random_scene(7, 50, 32, 32);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let bg = [0.0; 3];
    let (a, ga) = one.install(|| {
        let img = render(&gaussians, &pose, bg);
        let mut d = img.clone();
        for (v, t) in d.data.iter_mut().zip(&target.data) {
            *v -= t;
        }
        (img, splatcost::render_backward(&gaussians, &pose, bg, &d).unwrap())
    });
    let (b, gb) = four.install(|| {
        let img = render(&gaussians, &pose, bg);
        let mut d = img.clone();
        for (v, t) in d.data.iter_mut().zip(&target.data) {
            *v -= t;
        }
        (img, splatcost::render_backward(&gaussians, &pose, bg, &d).unwrap())
    });
    assert_eq!(a, b);
    assert_eq!(ga.params, gb.params);
    assert_eq!(ga.d_mu2d_norm, gb.d_mu2d_norm);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut total = GradCheck::default();
    for seed in 0..5 {
        total.merge(check_render_gradients(seed, 1 + (seed as usize * 2) % 10, 16, 16));
    }
    eprintln!("{total:?}");
    assert_eq!(total.failures, 0);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn output_in_unit_range(seed in 0u64..10_000, n in 0usize..40) {
            let (gaussians, pose, _) = random_scene(seed, n, 24, 20);
            let img = render(&gaussians, &pose, [1.0, 0.5, 0.0]);
            prop_assert!(img.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
}
