mod common;

use common::*;
use nuc_core::scene_sim::hover::draw_pose;
use nuc_core::scene_sim::profile::{radial_raw, sine_raw};
use nuc_core::scene_sim::{
    corrupt, make_radial_profile, make_sine_profile, sample_homography, simulate, textured_scene, CorruptionProfile,
    HoverModel, Intrinsics, ProfileKind, SimulationConfig,
};
use nuc_core::{Homography, ImageGrid, Psf};
use proptest::prelude::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn sine_profile_matches_formula_oracle() {
    let std = 37.0;
    let (g, d) = sine_raw(66, 66, std).unwrap();
    let mut og = Vec::new();
    let mut od = Vec::new();
    for t in 0..66 {
        for s in 0..66 {
            let (s, t) = (s as f64, t as f64);
            og.push(1.0 + 0.3 * (s / 2.5).sin() * (t / 7.5).sin());
            od.push(3.5 * std * ((s + t) / 5.0).sin() * ((s - t) / 10.0).sin());
        }
    }
    for p in 0..og.len() {
        assert!((g[p] - og[p]).abs() < 1e-12 && (d[p] - od[p]).abs() < 1e-12);
    }
    assert_eq!((g[0], d[0]), (1.0, 0.0));
    assert!(g.iter().all(|v| (v - 1.0).abs() <= 0.3));
    let prof = make_sine_profile(66, 66, std).unwrap();
    let (gm, dm) = (mean(&og), mean(&od));
    for p in 0..og.len() {
        assert!((prof.gain.values()[p] - (og[p] - gm + 1.0)).abs() < 1e-12);
        assert!((prof.offset.values()[p] - (od[p] - dm)).abs() < 1e-9);
    }
}

#[test]
fn radial_profile_extrema_and_vertex() {
    let (g, _) = radial_raw(66, 66, 10.0).unwrap();
    let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((lo - 0.7).abs() < 1e-12 && (hi - 1.3).abs() < 1e-12);
    let (g3, d3) = radial_raw(3, 3, 1.0).unwrap();
    let min_at = (0..9).min_by(|&a, &b| g3[a].total_cmp(&g3[b])).unwrap();
    assert_eq!(min_at, 4);
    assert_eq!(d3[4], 0.0);
}

proptest! {
    #[test]
    fn profiles_are_normalized(h in 3usize..40, w in 3usize..40, std in 0.1f64..100.0) {
        for prof in [make_radial_profile(h, w, std).unwrap(), make_sine_profile(h, w, std).unwrap()] {
            prop_assert!((prof.gain.mean().unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(prof.offset.mean().unwrap().abs() < 1e-9);
            prop_assert!(prof.gain.values().iter().all(|&g| g > 0.0));
        }
    }
}

#[test]
fn ten_thousand_samples_stay_within_one_pixel() {
    let model = HoverModel::default();
    let mut g = rng(21);
    for _ in 0..10_000 {
        let (h, _) = sample_homography(&model, 66, 66, &mut g).unwrap();
        assert!(h.max_corner_displacement(66, 66) <= 1.0);
    }
}

#[test]
fn marginal_ranges_hold_over_1e5_draws() {
    let model = HoverModel::default();
    let intr = Intrinsics::for_sensor(66, 66, model.fov_deg);
    let lateral = model.max_translation * model.altitude / intr.focal;
    let mut g = rng(22);
    let mut lo = [f64::INFINITY; 8];
    let mut hi = [f64::NEG_INFINITY; 8];
    for _ in 0..100_000 {
        let p = draw_pose(&model, &intr, &mut g);
        for (i, v) in [p.tx, p.ty, p.tz, p.roll, p.pitch, p.yaw, p.psi, p.xi]
            .into_iter()
            .enumerate()
        {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    let ranges = [
        lateral,
        lateral,
        model.t_z_range,
        model.tilt_range_deg,
        model.tilt_range_deg,
        model.yaw_range_deg,
        model.tilt_range_deg,
        model.tilt_range_deg,
    ];
    for i in 0..8 {
        assert!(
            lo[i] >= -ranges[i] && hi[i] <= ranges[i],
            "param {i}: [{}, {}]",
            lo[i],
            hi[i]
        );
        // the draws actually explore the interval
        assert!(hi[i] - lo[i] > 1.9 * ranges[i]);
    }
}

#[test]
fn exhausted_rejection_budget_is_a_config_error() {
    let model = HoverModel {
        max_translation: 1e-9,
        ..Default::default()
    };
    let mut g = rng(23);
    assert!(sample_homography(&model, 66, 66, &mut g).is_err());
}

#[test]
fn corrupt_trivial_cases() {
    let x = textured_scene(20, 20, 3).unwrap();
    let mut g = rng(24);
    let ident = CorruptionProfile::identity(20, 20).unwrap().with_snr(f64::INFINITY);
    let y = corrupt(&x, &Homography::identity(), &ident, &Psf::delta(), &mut g).unwrap();
    assert_eq!(y, x);

    let gain = ImageGrid::from_fn(20, 20, |r, c| 0.8 + 0.01 * (r + c) as f64).unwrap();
    let offset = ImageGrid::from_fn(20, 20, |r, c| r as f64 - 0.5 * c as f64).unwrap();
    let prof = CorruptionProfile::custom(gain, offset, f64::INFINITY).unwrap();
    let c = ImageGrid::filled(20, 20, 7.0).unwrap();
    let y = corrupt(&c, &Homography::identity(), &prof, &Psf::delta(), &mut g).unwrap();
    for p in 0..400 {
        let expect = 7.0 * prof.gain.values()[p] + prof.offset.values()[p];
        assert!((y.values()[p] - expect).abs() < 1e-12);
    }
}

#[test]
fn noise_level_matches_snr_over_30_seeds() {
    let x = textured_scene(66, 66, 9).unwrap();
    let prof = CorruptionProfile::identity(66, 66).unwrap().with_snr(1000.0);
    let signal_std = x.std().unwrap();
    let mut ratios = Vec::new();
    for seed in 0..30 {
        let mut g = rng(seed);
        let y = corrupt(&x, &Homography::identity(), &prof, &Psf::delta(), &mut g).unwrap();
        let n = y.zip_map(&x, |a, b| a - b).unwrap();
        ratios.push(n.std().unwrap() / signal_std);
    }
    let r = mean(&ratios);
    assert!((r - 1e-3).abs() <= 1e-4, "mean noise ratio {r}");
}

#[test]
fn default_dataset_shape_identity_pivots_and_disjoint_tiles() {
    let ds = simulate(&SimulationConfig::default()).unwrap();
    assert_eq!(ds.observations.total(), 64);
    assert_eq!(ds.observations.groups.len(), 8);
    for hs in &ds.truth.homographies {
        assert_eq!(hs[0], Homography::identity());
    }
    let size = 66;
    let origins = &ds.truth.origins;
    for a in 0..origins.len() {
        for b in a + 1..origins.len() {
            let (ra, ca) = origins[a];
            let (rb, cb) = origins[b];
            let rows = ra < rb + size && rb < ra + size;
            let cols = ca < cb + size && cb < ca + size;
            assert!(!(rows && cols), "tiles {a} and {b} overlap");
        }
    }
    assert!(matches!(ds.truth.profile.kind, ProfileKind::Radial));
}

#[test]
fn minimal_dataset_and_determinism() {
    let cfg = SimulationConfig {
        fovs: 1,
        k: 1,
        seed: 4,
        ..Default::default()
    };
    let a = simulate(&cfg).unwrap();
    assert_eq!(a.observations.total(), 1);
    assert_eq!(a.truth.homographies[0][0], Homography::identity());
    let b = simulate(&cfg).unwrap();
    assert_eq!(a, b);
    let c = simulate(&SimulationConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.observations, c.observations);
}

#[test]
fn mosaic_too_small_is_a_config_error() {
    let cfg = SimulationConfig::default();
    let small = textured_scene(100, 100, 1).unwrap();
    assert!(nuc_core::scene_sim::build_dataset(&small, &cfg).is_err());
}
