//! Forward operators `y ≈ g ⊙ A S^H x + d` for every frame, and the data-fit objective.

use rayon::prelude::*;

use crate::error::{NucError, Result};
use crate::grid::{Homography, ImageGrid, Mask, Psf, WarpPlan};
use crate::scene_sim::ObservationSet;
use crate::solver::GainOffsetMap;

/// Warp plan and visibility mask `W` of one frame.
#[derive(Debug, Clone)]
pub(crate) struct FrameModel {
    plan: WarpPlan,
    weight: Mask,
}

/// The linear maps `A S^{H_ij}` of every frame for fixed homographies.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    frames: Vec<Vec<FrameModel>>,
    psf: Psf,
    dims: (usize, usize),
}

impl Geometry {
    pub(crate) fn new(obs: &ObservationSet, hs: &[Vec<Homography>], psf: &Psf) -> Result<Self> {
        if hs.len() != obs.groups.len() || hs.iter().zip(&obs.groups).any(|(h, g)| h.len() != g.len()) {
            return Err(NucError::Dimensions(
                "homographies do not match the observation groups".into(),
            ));
        }
        let dims = obs.dims();
        if psf.size() > dims.0 || psf.size() > dims.1 {
            return Err(NucError::Config("PSF exceeds the sensor".into()));
        }
        let full = Mask::filled(dims.0, dims.1, true);
        let frames = obs
            .groups
            .iter()
            .zip(hs)
            .map(|(group, hg)| {
                group
                    .iter()
                    .zip(hg)
                    .map(|(y, h)| {
                        let plan = WarpPlan::new(h, &full, dims);
                        let weight = psf.output_mask(plan.valid()).and(y.mask())?;
                        Ok(FrameModel { plan, weight })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Geometry {
            frames,
            psf: psf.clone(),
            dims,
        })
    }

    pub(crate) fn pixels(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub(crate) fn groups(&self) -> usize {
        self.frames.len()
    }

    pub(crate) fn frames_in(&self, group: usize) -> usize {
        self.frames[group].len()
    }

    pub(crate) fn weight(&self, group: usize, frame: usize) -> &Mask {
        &self.frames[group][frame].weight
    }

    pub(crate) fn masks(&self) -> Vec<Vec<Mask>> {
        self.frames
            .iter()
            .map(|g| g.iter().map(|f| f.weight.clone()).collect())
            .collect()
    }

    /// `out = W ⊙ A S x` (zero outside `W`).
    pub(crate) fn predict(&self, group: usize, frame: usize, x: &[f64], out: &mut [f64]) {
        let f = &self.frames[group][frame];
        if self.psf.is_delta() {
            f.plan.apply(x, out);
        } else {
            let mut tmp = vec![0.0; out.len()];
            f.plan.apply(x, &mut tmp);
            self.psf.apply(&tmp, self.dims, &f.weight, out);
        }
        for (o, &ok) in out.iter_mut().zip(f.weight.as_slice()) {
            if !ok {
                *o = 0.0;
            }
        }
    }

    /// `out += (W ⊙ A S)ᵀ v`.
    pub(crate) fn predict_adjoint_add(&self, group: usize, frame: usize, v: &[f64], out: &mut [f64]) {
        let f = &self.frames[group][frame];
        let masked: Vec<f64> = v
            .iter()
            .zip(f.weight.as_slice())
            .map(|(&a, &ok)| if ok { a } else { 0.0 })
            .collect();
        if self.psf.is_delta() {
            f.plan.adjoint_add(&masked, out);
        } else {
            let mut tmp = vec![0.0; out.len()];
            self.psf.adjoint_add(&masked, self.dims, &f.weight, &mut tmp);
            f.plan.adjoint_add(&tmp, out);
        }
    }

    pub(crate) fn prediction_image(&self, group: usize, frame: usize, x: &[f64]) -> Result<ImageGrid> {
        let mut out = vec![0.0; self.pixels()];
        self.predict(group, frame, x, &mut out);
        ImageGrid::with_mask(out, self.weight(group, frame).clone())
    }

    /// `Σ_j ‖W_ij (g ⊙ A S x_i + d − y_j)‖²` for one group, summed in frame order.
    pub(crate) fn group_objective(&self, obs: &ObservationSet, group: usize, x: &[f64], map: &GainOffsetMap) -> f64 {
        let g = map.gain.values();
        let d = map.offset.values();
        let mut pred = vec![0.0; self.pixels()];
        let mut total = 0.0;
        for (j, y) in obs.groups[group].iter().enumerate() {
            self.predict(group, j, x, &mut pred);
            let w = self.weight(group, j).as_slice();
            let yv = y.values();
            for p in 0..pred.len() {
                if w[p] {
                    let r = g[p] * pred[p] + d[p] - yv[p];
                    total += r * r;
                }
            }
        }
        total
    }

    pub(crate) fn objective(&self, obs: &ObservationSet, x: &[ImageGrid], map: &GainOffsetMap) -> f64 {
        let parts: Vec<f64> = (0..self.groups())
            .into_par_iter()
            .map(|i| self.group_objective(obs, i, x[i].values(), map))
            .collect();
        parts.iter().sum()
    }
}

/// Data-fit objective `Σ_ij ‖W_ij (g ⊙ A S^{H_ij} x_i + d − y_j)‖²`.
pub fn objective(
    obs: &ObservationSet,
    x: &[ImageGrid],
    map: &GainOffsetMap,
    homographies: &[Vec<Homography>],
    psf: &Psf,
) -> Result<f64> {
    if x.len() != obs.groups.len() {
        return Err(NucError::Dimensions("one scene estimate per group is required".into()));
    }
    let geo = Geometry::new(obs, homographies, psf)?;
    Ok(geo.objective(obs, x, map))
}
