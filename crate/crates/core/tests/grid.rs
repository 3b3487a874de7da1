mod common;

use common::*;
use nuc_core::grid::{convolve, convolve_adjoint, warp, warp_adjoint, WarpPlan};
use nuc_core::scene_sim::{sample_homography, HoverModel};
use nuc_core::{Homography, ImageGrid, Mask, Psf};
use proptest::prelude::*;

#[test]
fn warp_matches_independent_bilinear_oracle() {
    let mut g = rng(11);
    for _ in 0..20 {
        let img = random_image(17, 19, &mut g);
        let h = random_homography(&mut g, 2.0, 0.03, 1e-4);
        let out = warp(&img, &h).unwrap();
        let mut checked = 0;
        for t in 0..17 {
            for s in 0..19 {
                let (x, y) = h.apply(s as f64, t as f64).unwrap();
                let expect = bilinear_oracle(img.values(), 17, 19, x, y);
                if out.is_valid(t, s) {
                    let e = expect.expect("valid output must have in-bounds support");
                    assert!((out.get(t, s) - e).abs() < 1e-12);
                    checked += 1;
                } else {
                    assert!(expect.is_none(), "in-bounds sample at ({s},{t}) was marked invalid");
                }
            }
        }
        assert!(checked > 200);
    }
}

#[test]
fn warp_is_linear() {
    let mut g = rng(12);
    for _ in 0..10 {
        let u = random_image(15, 15, &mut g);
        let v = random_image(15, 15, &mut g);
        let h = random_homography(&mut g, 1.5, 0.02, 1e-4);
        let (a, b) = (1.7, -0.3);
        let combo = u.zip_map(&v, |p, q| a * p + b * q).unwrap();
        let lhs = warp(&combo, &h).unwrap();
        let (wu, wv) = (warp(&u, &h).unwrap(), warp(&v, &h).unwrap());
        for p in 0..lhs.len() {
            let rhs = a * wu.values()[p] + b * wv.values()[p];
            assert!((lhs.values()[p] - rhs).abs() < 1e-12);
        }
    }
}

#[test]
fn warp_adjoint_identity_on_100_triples() {
    let mut g = rng(13);
    for _ in 0..100 {
        let u = random_image(12, 14, &mut g);
        let v = random_image(12, 14, &mut g);
        let h = random_homography(&mut g, 2.0, 0.05, 2e-4);
        let lhs = dot(warp(&u, &h).unwrap().values(), v.values());
        let rhs = dot(u.values(), warp_adjoint(&v, &h).unwrap().values());
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn plan_adjoint_respects_source_mask() {
    let mut g = rng(14);
    let mut valid = Mask::filled(10, 10, true);
    valid.set(4, 5, false);
    valid.set(0, 0, false);
    let h = random_homography(&mut g, 1.0, 0.02, 0.0);
    let plan = WarpPlan::new(&h, &valid, (10, 10));
    let u = ImageGrid::with_mask(random_image(10, 10, &mut g).values().to_vec(), valid.clone()).unwrap();
    let v = random_image(10, 10, &mut g);
    let fu = plan.apply_image(&u).unwrap();
    let atv = plan.adjoint_image(&v, &valid).unwrap();
    let lhs = dot(fu.values(), v.values());
    let rhs = dot(u.values(), atv.values());
    assert!((lhs - rhs).abs() < 1e-12);
    // no valid output touches the hole with nonzero weight
    for p in 0..100 {
        if plan.valid().as_slice()[p] {
            for &(i, w) in &plan.taps()[p] {
                assert!(w == 0.0 || valid.as_slice()[i as usize]);
            }
        }
    }
}

#[test]
fn integer_translation_is_an_exact_shift() {
    let mut g = rng(15);
    let img = random_image(9, 11, &mut g);
    let out = warp(&img, &Homography::translation(2.0, -1.0)).unwrap();
    for t in 0..9 {
        for s in 0..11 {
            let (src_t, src_s) = (t as i64 - 1, s as i64 + 2);
            let inside = (0..9).contains(&src_t) && (0..11).contains(&src_s);
            assert_eq!(out.is_valid(t, s), inside);
            if inside {
                assert_eq!(out.get(t, s), img.get(src_t as usize, src_s as usize));
            }
        }
    }
}

#[test]
fn composition_approximates_product_warp_on_smooth_scene() {
    // A half-pixel bilinear shift scales a wave of period P by cos(pi/P), so the
    // 2% bound needs fields without energy below ~16 px periods.
    let mut g = rng(16);
    let mut worst = 0.0f64;
    let mut std = f64::INFINITY;
    for _ in 0..50 {
        let scene = smooth_random_field(66, 66, &mut g);
        std = std.min(scene.std().unwrap());
        let (h1, _) = sample_homography(&HoverModel::default(), 66, 66, &mut g).unwrap();
        let (h2, _) = sample_homography(&HoverModel::default(), 66, 66, &mut g).unwrap();
        let twice = warp(&warp(&scene, &h1).unwrap(), &h2).unwrap();
        let once = warp(&scene, &h1.compose(&h2).unwrap()).unwrap();
        let both = twice.mask().and(once.mask()).unwrap().without_border(2);
        let n = both.count() as f64;
        let rms = (0..scene.len())
            .filter(|&p| both.as_slice()[p])
            .map(|p| (twice.values()[p] - once.values()[p]).powi(2))
            .sum::<f64>()
            / n;
        worst = worst.max(rms.sqrt() / scene.std().unwrap());
    }
    assert!(worst <= 0.02, "worst rms/std {worst} (min std {std})");
}

#[test]
fn convolution_preserves_constants_and_has_exact_adjoint() {
    let psf = Psf::gaussian(1.0, 5).unwrap();
    let flat = ImageGrid::filled(12, 12, 3.25).unwrap();
    let out = convolve(&flat, &psf).unwrap();
    assert_eq!(out.valid_count(), 8 * 8);
    for v in out.valid_values() {
        assert!((v - 3.25).abs() < 1e-12);
    }
    let mut g = rng(17);
    for _ in 0..20 {
        let u = random_image(12, 12, &mut g);
        let v = random_image(12, 12, &mut g);
        let lhs = dot(convolve(&u, &psf).unwrap().values(), v.values());
        let rhs = dot(u.values(), convolve_adjoint(&v, &psf).unwrap().values());
        assert!((lhs - rhs).abs() < 1e-11);
    }
}

#[test]
fn convolution_preserves_the_mean_of_a_periodic_interior() {
    // Mean over the valid region equals the mean of the source restricted to
    // the same region up to a boundary term that vanishes for linear ramps.
    let psf = Psf::gaussian(0.8, 3).unwrap();
    let ramp = ImageGrid::from_fn(10, 10, |r, c| 2.0 * r as f64 - 0.5 * c as f64).unwrap();
    let out = convolve(&ramp, &psf).unwrap();
    for t in 1..9 {
        for s in 1..9 {
            assert!((out.get(t, s) - ramp.get(t, s)).abs() < 1e-12);
        }
    }
}

#[test]
fn singular_homography_is_rejected() {
    let img = ImageGrid::filled(5, 5, 1.0).unwrap();
    let h = Homography::from_rows([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
    match h {
        Err(_) => {}
        Ok(h) => assert!(warp(&img, &h).is_err()),
    }
}

proptest! {
    #[test]
    fn inverse_round_trips_points(
        tx in -3.0f64..3.0, ty in -3.0f64..3.0, a in -0.05f64..0.05, p in -1e-3f64..1e-3,
        s in 0.0f64..60.0, t in 0.0f64..60.0,
    ) {
        let h = Homography::from_rows([[1.0 + a, 0.01, tx], [-a, 1.0, ty], [p, -p, 1.0]]).unwrap();
        let inv = h.inverse().unwrap();
        let (x, y) = h.apply(s, t).unwrap();
        let (s2, t2) = inv.apply(x, y).unwrap();
        prop_assert!((s2 - s).abs() < 1e-9 && (t2 - t).abs() < 1e-9);
    }

    #[test]
    fn warp_never_produces_nonfinite_values(seed in 0u64..1000) {
        let mut g = rng(seed);
        let img = random_image(8, 8, &mut g);
        let h = random_homography(&mut g, 3.0, 0.1, 1e-3);
        if let Ok(out) = warp(&img, &h) {
            prop_assert!(out.values().iter().all(|v| v.is_finite()));
        }
    }
}
