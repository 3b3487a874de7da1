//! Test-only helpers and independent oracles.
#![allow(dead_code)]

use nuc_core::solver::GainOffsetMap;
use nuc_core::{Homography, ImageGrid, Mask};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

/// Smooth analytic test pattern with its exact gradient.
pub fn smooth_pattern(s: f64, t: f64) -> f64 {
    40.0 * (0.21 * s + 0.3).sin() * (0.17 * t - 0.4).cos() + 0.05 * s * t + 10.0
}

pub fn smooth_pattern_grad(s: f64, t: f64) -> (f64, f64) {
    let ds = 40.0 * 0.21 * (0.21 * s + 0.3).cos() * (0.17 * t - 0.4).cos() + 0.05 * t;
    let dt = -40.0 * 0.17 * (0.21 * s + 0.3).sin() * (0.17 * t - 0.4).sin() + 0.05 * s;
    (ds, dt)
}

pub fn smooth_image(h: usize, w: usize) -> ImageGrid {
    ImageGrid::from_fn(h, w, |r, c| smooth_pattern(c as f64, r as f64)).unwrap()
}

/// Small random perspective perturbation of the identity.
pub fn random_homography(rng: &mut ChaCha8Rng, shift: f64, linear: f64, projective: f64) -> Homography {
    let mut r = |a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    Homography::from_rows([
        [1.0 + r(linear), r(linear), r(shift)],
        [r(linear), 1.0 + r(linear), r(shift)],
        [r(projective), r(projective), 1.0],
    ])
    .unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bilinear interpolation written from scratch: every neighbor is read, so
/// the sample must lie inside `[0, w-1] x [0, h-1]`.
pub fn bilinear_oracle(values: &[f64], h: usize, w: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |r: usize, c: usize| values[r * w + c];
    Some(
        at(y0, x0) * (1.0 - fx) * (1.0 - fy)
            + at(y0, x1) * fx * (1.0 - fy)
            + at(y1, x0) * (1.0 - fx) * fy
            + at(y1, x1) * fx * fy,
    )
}

/// Dense least squares from the SVD of the full matrix.
pub fn dense_least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = rows.len();
    let n = rows[0].len();
    let a = nalgebra::DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-12).unwrap().as_slice().to_vec()
}

/// Sum of random low-frequency cosines (periods of 16 px and longer).
pub fn smooth_random_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let f = std::f64::consts::TAU / rng.random_range(16.0..60.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (
                f * a.cos(),
                f * a.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(5.0..20.0),
            )
        })
        .collect();
    ImageGrid::from_fn(h, w, |r, c| {
        100.0
            + waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * c as f64 + fy * r as f64 + ph).cos())
                .sum::<f64>()
    })
    .unwrap()
}

/// Identity for frame 0, then small random homographies that keep most of a
/// 6x6 or 8x8 frame inside the image.
pub fn small_homographies(k: usize, rng: &mut ChaCha8Rng) -> Vec<Homography> {
    (0..k)
        .map(|j| {
            if j == 0 {
                Homography::identity()
            } else {
                random_homography(rng, 0.6, 0.02, 0.0)
            }
        })
        .collect()
}

pub fn random_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> GainOffsetMap {
    GainOffsetMap::new(
        ImageGrid::from_fn(h, w, |_, _| rng.random_range(0.6..1.4)).unwrap(),
        ImageGrid::from_fn(h, w, |_, _| rng.random_range(-3.0..3.0)).unwrap(),
        Mask::filled(h, w, true),
    )
    .unwrap()
}

/// Bilinear weights of the sample that output pixel `p` takes from the scene,
/// or `None` when the sample leaves the image.
pub fn sample_weights(h: usize, w: usize, hm: &Homography, p: usize) -> Option<Vec<f64>> {
    let (sx, sy) = hm.apply((p % w) as f64, (p / w) as f64)?;
    let mut probe = vec![0.0; h * w];
    let mut row = vec![0.0; h * w];
    for q in 0..h * w {
        probe[q] = 1.0;
        row[q] = bilinear_oracle(&probe, h, w, sx, sy)?;
        probe[q] = 0.0;
    }
    Some(row)
}

/// Per-pixel `y ≈ gain·a + offset` fit over the frames that see pixel `p`.
/// The 2x2 normal equations are solved in exact rational arithmetic, so the
/// only rounding is the final conversion. `None` when fewer than two samples
/// or a constant predictor.
pub fn gd_regression_oracle(frames: &[ImageGrid], x: &ImageGrid, hs: &[Homography]) -> Vec<Option<(f64, f64)>> {
    let (h, w) = x.dims();
    (0..h * w)
        .map(|p| {
            let (t, s) = (p / w, p % w);
            let exact = |v: f64| BigRational::from_float(v).unwrap();
            let mut pairs = Vec::new();
            for (y, hm) in frames.iter().zip(hs) {
                let (sx, sy) = hm.apply(s as f64, t as f64).unwrap();
                if let (Some(a), true) = (bilinear_oracle(x.values(), h, w, sx, sy), y.is_valid(t, s)) {
                    pairs.push((exact(a), exact(y.values()[p])));
                }
            }
            let n = BigRational::from_integer(pairs.len().into());
            let zero = BigRational::zero();
            let (mut sa, mut sb, mut saa, mut sab) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());
            for (a, b) in &pairs {
                sa += a;
                sb += b;
                saa += a * a;
                sab += a * b;
            }
            let det = &n * &saa - &sa * &sa;
            if pairs.len() < 2 || det.is_zero() {
                return None;
            }
            let gain = (&n * &sab - &sa * &sb) / &det;
            let offset = (&sb - &gain * &sa) / &n;
            Some((gain.to_f64().unwrap(), offset.to_f64().unwrap()))
        })
        .collect()
}

/// A gain/offset regression case whose frames follow `g·prediction + d` plus
/// perturbations, so every pixel is a well-posed two-parameter fit.
pub fn gd_case(rng: &mut ChaCha8Rng, k: usize) -> (ImageGrid, Vec<Homography>, Vec<ImageGrid>) {
    let x = random_image(6, 6, rng);
    let hs = small_homographies(k, rng);
    let g = ImageGrid::from_fn(6, 6, |_, _| rng.random_range(0.5..1.5)).unwrap();
    let d = ImageGrid::from_fn(6, 6, |_, _| rng.random_range(-5.0..5.0)).unwrap();
    let frames = hs
        .iter()
        .map(|hm| {
            ImageGrid::from_fn(6, 6, |t, s| {
                let (sx, sy) = hm.apply(s as f64, t as f64).unwrap();
                let a = bilinear_oracle(x.values(), 6, 6, sx, sy).unwrap_or(0.0);
                g.get(t, s) * a + d.get(t, s) + 0.1 * rng.random_range(-1.0..1.0)
            })
            .unwrap()
        })
        .collect();
    (x, hs, frames)
}

/// Dense masked least-squares solution for one group's scene given fixed gain,
/// offset and homographies.
pub fn dense_scene_oracle(frames: &[ImageGrid], hs: &[Homography], map: &GainOffsetMap) -> Vec<f64> {
    let (h, w) = frames[0].dims();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (y, hm) in frames.iter().zip(hs) {
        for p in 0..h * w {
            if let Some(row) = sample_weights(h, w, hm, p) {
                let gain = map.gain.values()[p];
                rows.push(row.iter().map(|v| gain * v).collect());
                rhs.push(y.values()[p] - map.offset.values()[p]);
            }
        }
    }
    dense_least_squares(&rows, &rhs)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
