//! Homography registration of a clean observation against its pivot image.
//!
//! Integer template matching supplies a translation estimate; forward-additive
//! Lucas–Kanade then refines all eight free entries of `H` by Gauss–Newton on the
//! residual `S^H pivot − obs`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{NucError, Result};
use crate::grid::{sample_bilinear, Homography, ImageGrid, WarpPlan};

/// Fewest interior pixels a Gauss–Newton step may be built from.
pub const MIN_INTERIOR_PIXELS: usize = 50;
/// Largest accepted condition estimate of the (Jacobi-scaled) normal matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest overlap, as a fraction of the image area, template matching accepts.
pub const MIN_OVERLAP_FRACTION: f64 = 0.25;
const DEGENERATE_DENOMINATOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub max_gn_iterations: usize,
    /// Pixels excluded along each side of the observation.
    pub boundary_margin: usize,
    /// Added to the diagonal of `MᵀM`.
    pub damping: f64,
    /// Early exit once `‖ΔH‖∞` falls below this.
    pub step_tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_gn_iterations: 50,
            boundary_margin: 1,
            damping: 0.0,
            step_tolerance: 1e-10,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_gn_iterations == 0 {
            return Err(NucError::Config("max_gn_iterations must be at least 1".into()));
        }
        if self.boundary_margin == 0 {
            return Err(NucError::Config("boundary_margin must be at least 1".into()));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(NucError::Config(format!("invalid damping {}", self.damping)));
        }
        if !(self.step_tolerance >= 0.0) {
            return Err(NucError::Config("step_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Integer translation minimizing the mean squared difference between the shifted
/// pivot and `obs` over their overlap.
///
/// Ties go to the smaller shift, then lexicographically smaller `(tx, ty)`.
pub fn template_match_shift(pivot: &ImageGrid, obs: &ImageGrid, search_radius: usize) -> Result<Homography> {
    if pivot.dims() != obs.dims() {
        return Err(NucError::Dimensions("pivot and observation differ in size".into()));
    }
    let (h, w) = obs.dims();
    let r = search_radius as i64;
    let mut best: Option<(f64, i64, i64, i64, usize)> = None;
    for ty in -r..=r {
        for tx in -r..=r {
            let (mut sum, mut count) = (0.0, 0usize);
            for t in 0..h as i64 {
                let pt = t + ty;
                if pt < 0 || pt >= h as i64 {
                    continue;
                }
                for s in 0..w as i64 {
                    let ps = s + tx;
                    if ps < 0 || ps >= w as i64 {
                        continue;
                    }
                    let (pr, pc, or, oc) = (pt as usize, ps as usize, t as usize, s as usize);
                    if pivot.is_valid(pr, pc) && obs.is_valid(or, oc) {
                        let diff = pivot.get(pr, pc) - obs.get(or, oc);
                        sum += diff * diff;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let score = sum / count as f64;
            let key = (score, tx * tx + ty * ty, tx, ty);
            let better = match best {
                None => true,
                Some((bs, bn, btx, bty, _)) => key < (bs, bn, btx, bty),
            };
            if better {
                best = Some((score, key.1, tx, ty, count));
            }
        }
    }
    let (_, _, tx, ty, count) = best.ok_or_else(|| NucError::RegistrationFailure("no overlap at any shift".into()))?;
    if (count as f64) < MIN_OVERLAP_FRACTION * (h * w) as f64 {
        return Err(NucError::RegistrationFailure(format!(
            "best shift ({tx}, {ty}) overlaps only {count} of {} pixels",
            h * w
        )));
    }
    Ok(Homography::translation(tx as f64, ty as f64))
}

/// Central differences `[−½, 0, ½]` along columns (`ds`) and rows (`dt`).
/// A gradient is valid where the pixel and both neighbors along its axis are.
pub fn image_gradients(image: &ImageGrid) -> Result<(ImageGrid, ImageGrid)> {
    let (h, w) = image.dims();
    let mut ds = vec![0.0; h * w];
    let mut dt = vec![0.0; h * w];
    let mut valid = vec![false; h * w];
    for t in 1..h - 1 {
        for s in 1..w - 1 {
            let ok = image.is_valid(t, s)
                && image.is_valid(t, s - 1)
                && image.is_valid(t, s + 1)
                && image.is_valid(t - 1, s)
                && image.is_valid(t + 1, s);
            if ok {
                let p = t * w + s;
                ds[p] = 0.5 * (image.get(t, s + 1) - image.get(t, s - 1));
                dt[p] = 0.5 * (image.get(t + 1, s) - image.get(t - 1, s));
                valid[p] = true;
            }
        }
    }
    let mask = crate::grid::Mask::from_vec(h, w, valid)?;
    Ok((ImageGrid::with_mask(ds, mask.clone())?, ImageGrid::with_mask(dt, mask)?))
}

/// Derivative of the warped pivot intensity at output point `(s, t)` with respect
/// to the nine row-major entries of `h`, given the pivot gradient `grad` sampled at
/// the warped location.
pub fn gn_jacobian_row(grad: (f64, f64), point: (f64, f64), h: &Homography) -> Result<[f64; 9]> {
    let (s, t) = point;
    let w = h.denominator(s, t);
    if w.abs() < DEGENERATE_DENOMINATOR {
        return Err(NucError::DegeneratePoint { s, t, denominator: w });
    }
    let m = h.matrix();
    let sw = (m[(0, 0)] * s + m[(0, 1)] * t + m[(0, 2)]) / w;
    let tw = (m[(1, 0)] * s + m[(1, 1)] * t + m[(1, 2)]) / w;
    Ok(jacobian_row(grad, s, t, sw, tw, w))
}

#[inline]
fn jacobian_row(grad: (f64, f64), s: f64, t: f64, sw: f64, tw: f64, w: f64) -> [f64; 9] {
    let (xs, xt) = grad;
    let inv = 1.0 / w;
    let proj = sw * xs + tw * xt;
    [
        inv * s * xs,
        inv * t * xs,
        inv * xs,
        inv * s * xt,
        inv * t * xt,
        inv * xt,
        -inv * s * proj,
        -inv * t * proj,
        -inv * proj,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutcome {
    pub homography: Homography,
    /// RMS residual at the initial homography.
    pub initial_rms: f64,
    /// RMS residual at the returned homography.
    pub final_rms: f64,
    pub iterations: usize,
    pub pixels: usize,
}

struct Linearization {
    rms: f64,
    pixels: usize,
    normal: SMatrix<f64, 8, 8>,
    rhs: SVector<f64, 8>,
}

fn linearize(
    pivot: &ImageGrid,
    grads: &(ImageGrid, ImageGrid),
    obs: &ImageGrid,
    h: &Homography,
    margin: usize,
) -> Linearization {
    let (height, width) = obs.dims();
    let plan = WarpPlan::new(h, pivot.mask(), obs.dims());
    let mut normal = SMatrix::<f64, 9, 9>::zeros();
    let mut rhs = SVector::<f64, 9>::zeros();
    let (mut sq, mut pixels) = (0.0, 0usize);
    let mut warped = vec![0.0; height * width];
    plan.apply(pivot.values(), &mut warped);
    for t in margin..height.saturating_sub(margin) {
        for s in margin..width.saturating_sub(margin) {
            let p = t * width + s;
            if !plan.valid().as_slice()[p] || !obs.is_valid(t, s) {
                continue;
            }
            let (sw, tw) = plan.sample_point(p);
            let (Some(xs), Some(xt)) = (sample_bilinear(&grads.0, sw, tw), sample_bilinear(&grads.1, sw, tw)) else {
                continue;
            };
            let (sf, tf) = (s as f64, t as f64);
            let row = SVector::<f64, 9>::from(jacobian_row((xs, xt), sf, tf, sw, tw, h.denominator(sf, tf)));
            let r = warped[p] - obs.get(t, s);
            normal.ger(1.0, &row, &row, 1.0);
            rhs.axpy(r, &row, 1.0);
            sq += r * r;
            pixels += 1;
        }
    }
    Linearization {
        rms: if pixels > 0 {
            (sq / pixels as f64).sqrt()
        } else {
            f64::INFINITY
        },
        pixels,
        // H33 stays fixed at 1, so only the leading 8x8 block is free.
        normal: normal.fixed_view::<8, 8>(0, 0).into_owned(),
        rhs: rhs.fixed_rows::<8>(0).into_owned(),
    }
}

/// Gauss–Newton step `ΔH = −(MᵀM + λI)⁻¹ Mᵀ r` over the eight free entries, solved
/// on the Jacobi-scaled system.
fn gn_step(lin: &Linearization, damping: f64) -> Result<SVector<f64, 8>> {
    let mut a = lin.normal;
    for i in 0..8 {
        a[(i, i)] += damping;
    }
    let scale = SVector::<f64, 8>::from_fn(|i, _| {
        let d = a[(i, i)];
        if d > 0.0 {
            1.0 / d.sqrt()
        } else {
            0.0
        }
    });
    if scale.iter().any(|&v| v == 0.0) {
        return Err(NucError::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let scaled = SMatrix::<f64, 8, 8>::from_fn(|i, j| a[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(NucError::IllConditioned { condition });
    }
    let b = lin.rhs.component_mul(&scale);
    let chol = scaled.cholesky().ok_or(NucError::IllConditioned { condition })?;
    Ok(-chol.solve(&b).component_mul(&scale))
}

/// Refines `init` so that `S^H pivot ≈ obs`, returning the lowest-residual iterate.
pub fn register(pivot: &ImageGrid, obs: &ImageGrid, init: &Homography, cfg: &RegistrationConfig) -> Result<Homography> {
    register_detailed(pivot, obs, init, cfg).map(|o| o.homography)
}

pub fn register_detailed(
    pivot: &ImageGrid,
    obs: &ImageGrid,
    init: &Homography,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    cfg.validate()?;
    if pivot.dims() != obs.dims() {
        return Err(NucError::Dimensions("pivot and observation differ in size".into()));
    }
    let grads = image_gradients(pivot)?;
    let margin = cfg.boundary_margin;
    let mut h = *init;
    let mut lin = linearize(pivot, &grads, obs, &h, margin);
    if lin.pixels < MIN_INTERIOR_PIXELS {
        return Err(NucError::InsufficientOverlap {
            found: lin.pixels,
            required: MIN_INTERIOR_PIXELS,
        });
    }
    let initial_rms = lin.rms;
    let (mut best_h, mut best_rms, mut best_pixels) = (h, lin.rms, lin.pixels);
    let mut iterations = 0;
    while iterations < cfg.max_gn_iterations {
        let step = gn_step(&lin, cfg.damping)?;
        iterations += 1;
        let mut entries = h.entries();
        for (e, d) in entries.iter_mut().zip(step.iter()) {
            *e += d;
        }
        let Ok(next) = Homography::from_rows([
            [entries[0], entries[1], entries[2]],
            [entries[3], entries[4], entries[5]],
            [entries[6], entries[7], entries[8]],
        ]) else {
            log::debug!("registration step left the invertible set; stopping");
            break;
        };
        h = next;
        lin = linearize(pivot, &grads, obs, &h, margin);
        if lin.pixels < MIN_INTERIOR_PIXELS {
            break;
        }
        if lin.rms < best_rms {
            (best_h, best_rms, best_pixels) = (h, lin.rms, lin.pixels);
        }
        if step.amax() < cfg.step_tolerance {
            break;
        }
    }
    Ok(RegistrationOutcome {
        homography: best_h,
        initial_rms,
        final_rms: best_rms,
        iterations,
        pixels: best_pixels,
    })
}
