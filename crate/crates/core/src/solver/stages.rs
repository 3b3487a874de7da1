//! The individual blocks of the alternating minimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{NucError, Result};
use crate::grid::{convolve, masked_moments, masked_pair_moments, Homography, ImageGrid, Mask};
use crate::lsqr::{lsqr, LinearOperator, LsqrOptions};
use crate::registration::{register, template_match_shift};
use crate::scene_sim::{CorruptionProfile, ObservationSet};
use crate::solver::model::Geometry;
use crate::solver::{GainOffsetMap, SolverConfig};

/// Relative tolerance of the operator/adjoint consistency check.
const ADJOINT_TOLERANCE: f64 = 1e-9;

/// Pixel-wise statistics of all observations: offset = mean, gain = standard
/// deviation floored at `sqrt(variance_floor)`.
///
/// Pixels seen fewer than twice or with variance below the floor are left out of
/// the support. Nothing is normalized here; the solver normalizes together with
/// the scene estimates.
pub fn init_gd(obs: &ObservationSet, variance_floor: f64) -> Result<GainOffsetMap> {
    let (h, w) = obs.dims();
    let stack: Vec<(&ImageGrid, &Mask)> = obs.iter().map(|y| (y, y.mask())).collect();
    let moments = masked_moments(&stack)?;
    let counts = moments.coverage.as_slice();
    let floor = variance_floor.max(0.0);
    let n = h * w;
    let (mut gain, mut offset, mut support) = (vec![1.0; n], vec![0.0; n], vec![false; n]);
    for p in 0..n {
        if counts[p] == 0 {
            continue;
        }
        let var = moments.variance.values()[p];
        offset[p] = moments.mean.values()[p];
        gain[p] = var.max(floor).sqrt();
        support[p] = counts[p] >= 2 && var >= floor && var > 0.0;
    }
    let gain = gain.iter().map(|&g| if g > 0.0 { g } else { 1.0 }).collect();
    GainOffsetMap::new(
        ImageGrid::from_vec(h, w, gain)?,
        ImageGrid::from_vec(h, w, offset)?,
        Mask::from_vec(h, w, support)?,
    )
}

/// Smooth random field in `[-1, 1]` with `max |φ| = 1`, built from a few
/// low-frequency cosines.
fn smooth_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let mut field: Vec<f64> = (0..h * w)
        .map(|p| {
            let u = (p % w) as f64 / w as f64;
            let v = (p / w) as f64 / h as f64;
            waves
                .iter()
                .map(|&(fu, fv, phase, amp)| amp * (std::f64::consts::PI * (fu * u + fv * v) + phase).cos())
                .sum()
        })
        .collect();
    let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        field.iter_mut().for_each(|v| *v /= peak);
    }
    field
}

/// Stand-in for a laboratory two-point calibration: the true fields perturbed by
/// smooth errors, `g·(1 + p·φ_g)` and `d + p·max|d|·φ_d`, with `max |φ| = 1`.
pub fn initial_nuc(profile: &CorruptionProfile, perturbation: f64, seed: u64) -> Result<GainOffsetMap> {
    if !(perturbation >= 0.0) || !perturbation.is_finite() {
        return Err(NucError::Config(format!(
            "perturbation {perturbation} must be nonnegative"
        )));
    }
    let (h, w) = profile.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi_g = smooth_field(h, w, &mut rng);
    let phi_d = smooth_field(h, w, &mut rng);
    let dmax = profile.offset.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = profile
        .gain
        .values()
        .iter()
        .zip(&phi_g)
        .map(|(g, f)| g * (1.0 + perturbation * f))
        .collect();
    let offset = profile
        .offset
        .values()
        .iter()
        .zip(&phi_d)
        .map(|(d, f)| d + perturbation * dmax * f)
        .collect();
    GainOffsetMap::new(
        ImageGrid::from_vec(h, w, gain)?,
        ImageGrid::from_vec(h, w, offset)?,
        Mask::filled(h, w, true),
    )
}

/// `x̃ = (y − d) / g` where `y` is valid and `g > 0`.
pub fn clean_observation(y: &ImageGrid, map: &GainOffsetMap) -> Result<ImageGrid> {
    let g = map.gain.values();
    let d = map.offset.values();
    let mut bits = y.mask().as_slice().to_vec();
    let values = y
        .values()
        .iter()
        .enumerate()
        .map(|(p, &v)| {
            if bits[p] && g[p] > 0.0 {
                (v - d[p]) / g[p]
            } else {
                bits[p] = false;
                0.0
            }
        })
        .collect();
    let (h, w) = y.dims();
    ImageGrid::with_mask(values, Mask::from_vec(h, w, bits)?)
}

/// Cleaned pivot frame with invalid pixels filled by the valid mean, so the scene
/// estimate is defined everywhere.
pub(crate) fn initial_scene(pivot: &ImageGrid, map: &GainOffsetMap) -> Result<ImageGrid> {
    let clean = clean_observation(pivot, map)?;
    let fill = clean
        .mean()
        .ok_or_else(|| NucError::EmptyOverlap("pivot frame has no valid pixels".into()))?;
    let values = clean
        .values()
        .iter()
        .zip(clean.mask().as_slice())
        .map(|(&v, &ok)| if ok { v } else { fill })
        .collect();
    ImageGrid::from_vec(clean.height(), clean.width(), values)
}

/// Stacked per-group operator `x ↦ [W_ij ⊙ g ⊙ A S_ij x]_j`.
struct GroupOperator<'a> {
    geo: &'a Geometry,
    group: usize,
    gain: &'a [f64],
}

impl LinearOperator for GroupOperator<'_> {
    fn nrows(&self) -> usize {
        self.geo.frames_in(self.group) * self.geo.pixels()
    }

    fn ncols(&self) -> usize {
        self.geo.pixels()
    }

    fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        let n = self.geo.pixels();
        let mut pred = vec![0.0; n];
        for (j, chunk) in y.chunks_mut(n).enumerate() {
            self.geo.predict(self.group, j, x, &mut pred);
            for ((yi, &pi), &gi) in chunk.iter_mut().zip(&pred).zip(self.gain) {
                *yi += gi * pi;
            }
        }
    }

    fn adjoint_add(&self, y: &[f64], x: &mut [f64]) {
        let n = self.geo.pixels();
        let mut v = vec![0.0; n];
        for (j, chunk) in y.chunks(n).enumerate() {
            for ((vi, &yi), &gi) in v.iter_mut().zip(chunk).zip(self.gain) {
                *vi = gi * yi;
            }
            self.geo.predict_adjoint_add(self.group, j, &v, x);
        }
    }
}

fn check_adjoint(op: &dyn LinearOperator, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..op.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..op.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut au = vec![0.0; op.nrows()];
    op.apply_add(&u, &mut au);
    let mut atv = vec![0.0; op.ncols()];
    op.adjoint_add(&v, &mut atv);
    let lhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
    let rhs: f64 = u.iter().zip(&atv).map(|(a, b)| a * b).sum();
    let scale = au.iter().map(|a| a.abs()).sum::<f64>() + atv.iter().map(|a| a.abs()).sum::<f64>();
    if (lhs - rhs).abs() > ADJOINT_TOLERANCE * scale.max(1.0) {
        return Err(NucError::Internal(format!(
            "operator and adjoint disagree: {lhs} vs {rhs}"
        )));
    }
    Ok(())
}

/// Masked least-squares update of every group's scene, warm-started from `x`.
pub(crate) fn x_stage_with(
    obs: &ObservationSet,
    geo: &Geometry,
    x: &[ImageGrid],
    map: &GainOffsetMap,
    iterations: usize,
) -> Result<Vec<ImageGrid>> {
    let (h, w) = obs.dims();
    let n = h * w;
    let opts = LsqrOptions {
        max_iterations: iterations,
        ..Default::default()
    };
    (0..obs.groups.len())
        .into_par_iter()
        .map(|i| {
            let op = GroupOperator {
                geo,
                group: i,
                gain: map.gain.values(),
            };
            check_adjoint(&op, i as u64)?;
            let d = map.offset.values();
            let mut b = vec![0.0; op.nrows()];
            let mut any = false;
            for (j, y) in obs.groups[i].iter().enumerate() {
                let wmask = geo.weight(i, j).as_slice();
                for p in 0..n {
                    if wmask[p] {
                        b[j * n + p] = y.values()[p] - d[p];
                        any = true;
                    }
                }
            }
            if !any {
                log::warn!("group {i} has no visible pixels; scene left unchanged");
                return Ok(x[i].clone());
            }
            let out = lsqr(&op, &b, Some(x[i].values()), &opts);
            ImageGrid::from_vec(h, w, out.x)
        })
        .collect()
}

/// Pixel-wise linear regression of observations on predictions `A S x̂`.
///
/// Pixels with fewer than `min_pairs` samples, prediction variance below
/// `variance_floor`, or a nonpositive fitted gain keep their previous values and
/// leave the support.
pub(crate) fn gd_stage_with(
    obs: &ObservationSet,
    geo: &Geometry,
    x: &[ImageGrid],
    previous: &GainOffsetMap,
    min_pairs: usize,
    variance_floor: f64,
) -> Result<GainOffsetMap> {
    let predictions: Vec<Vec<ImageGrid>> = (0..obs.groups.len())
        .into_par_iter()
        .map(|i| {
            (0..obs.groups[i].len())
                .map(|j| geo.prediction_image(i, j, x[i].values()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut stack = Vec::with_capacity(obs.total());
    for (i, group) in obs.groups.iter().enumerate() {
        for (j, y) in group.iter().enumerate() {
            stack.push((&predictions[i][j], y, geo.weight(i, j)));
        }
    }
    let moments = masked_pair_moments(&stack, min_pairs as u32)?;
    let (h, w) = obs.dims();
    let mut gain = previous.gain.values().to_vec();
    let mut offset = previous.offset.values().to_vec();
    let mut support = vec![false; h * w];
    let enough = moments.mean_a.mask().as_slice();
    for p in 0..h * w {
        if !enough[p] {
            continue;
        }
        let var = moments.var_a.values()[p];
        if !(var >= variance_floor) || var <= 0.0 {
            continue;
        }
        let g = moments.cov_ab.values()[p] / var;
        if !(g > 0.0) || !g.is_finite() {
            continue;
        }
        gain[p] = g;
        offset[p] = moments.mean_b.values()[p] - g * moments.mean_a.values()[p];
        support[p] = true;
    }
    GainOffsetMap::new(
        ImageGrid::from_vec(h, w, gain)?,
        ImageGrid::from_vec(h, w, offset)?,
        Mask::from_vec(h, w, support)?,
    )
}

/// A pair whose registration failed and kept its previous homography.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFailure {
    pub group: usize,
    pub frame: usize,
    pub error: NucError,
}

pub(crate) fn pivot_reference(x: &ImageGrid, cfg: &SolverConfig) -> Result<ImageGrid> {
    if cfg.psf.is_delta() {
        Ok(x.clone())
    } else {
        convolve(x, &cfg.psf)
    }
}

/// Registers every non-pivot frame of every group against its group's scene
/// estimate, using cleaned observations. Frame 0 of each group stays the identity.
///
/// With `initial = true` each pair is first located by template matching.
pub(crate) fn registration_stage_with(
    obs: &ObservationSet,
    x: &[ImageGrid],
    map: &GainOffsetMap,
    current: &[Vec<Homography>],
    cfg: &SolverConfig,
    initial: bool,
) -> Result<(Vec<Vec<Homography>>, Vec<PairFailure>)> {
    let pivots: Vec<ImageGrid> = x.iter().map(|xi| pivot_reference(xi, cfg)).collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = obs
        .groups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| (1..g.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<Homography>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let clean = clean_observation(&obs.groups[i][j], map)?;
            let start = if initial {
                template_match_shift(&pivots[i], &clean, cfg.template_radius)?
            } else {
                current[i][j]
            };
            register(&pivots[i], &clean, &start, &cfg.registration)
        })
        .collect();
    let mut out = current.to_vec();
    let mut failures = Vec::new();
    for (&(i, j), res) in pairs.iter().zip(results) {
        match res {
            Ok(h) => out[i][j] = h,
            Err(error) => {
                log::warn!("registration of group {i} frame {j} failed: {error}");
                failures.push(PairFailure {
                    group: i,
                    frame: j,
                    error,
                });
            }
        }
    }
    Ok((out, failures))
}

/// Affine member `(a, b)` of the scale/shift ambiguity: `x ← a x + b`,
/// `g ← g / a`, `d ← d − (b / a) g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ambiguity {
    pub scale: f64,
    pub shift: f64,
}

/// Applies an ambiguity transform in place. The objective is unchanged because
/// warps and PSFs preserve constants.
pub fn apply_ambiguity(x: &mut [ImageGrid], map: &mut GainOffsetMap, t: Ambiguity) -> Result<()> {
    let Ambiguity { scale: a, shift: b } = t;
    if !(a != 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(NucError::Normalization(a));
    }
    for xi in x.iter_mut() {
        *xi = xi.map(|v| a * v + b)?;
    }
    let d = map.offset.zip_map(&map.gain, |d, g| d - (b / a) * g)?;
    map.gain = map.gain.map(|g| g / a)?;
    map.offset = d;
    Ok(())
}

/// Maps the state to mean gain 1 and mean offset 0 over the support. Returns the
/// transform that was applied.
pub fn normalize_parts(x: &mut [ImageGrid], map: &mut GainOffsetMap) -> Result<Ambiguity> {
    let support = map.support.as_slice();
    let (mut gs, mut ds, mut n) = (0.0, 0.0, 0usize);
    for (p, &ok) in support.iter().enumerate() {
        if ok {
            gs += map.gain.values()[p];
            ds += map.offset.values()[p];
            n += 1;
        }
    }
    if n == 0 {
        return Err(NucError::Normalization(f64::NAN));
    }
    let a = gs / n as f64;
    let b = ds / n as f64;
    if !(a > 0.0) || !a.is_finite() {
        return Err(NucError::Normalization(a));
    }
    let t = Ambiguity { scale: a, shift: b };
    apply_ambiguity(x, map, t)?;
    Ok(t)
}
