//! Joint Gauss–Newton refinement of scenes, gain and offset for fixed homographies.
//!
//! Alternating the two linear blocks removes high-frequency gain/offset errors
//! quickly but only chips away at smooth ones, because sub-pixel motion couples
//! neighbouring pixels weakly. Linearizing the bilinear model around the current
//! point and solving for all unknowns at once propagates that coupling across the
//! whole sensor in a single Krylov solve.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::ImageGrid;
use crate::lsqr::{lsqr, LinearOperator, LsqrOptions};
use crate::scene_sim::ObservationSet;
use crate::solver::model::Geometry;
use crate::solver::GainOffsetMap;

/// Column-scaled Jacobian of all frame residuals with respect to
/// `(x_1 … x_G, g, d)`.
struct JointOperator<'a> {
    geo: &'a Geometry,
    gain: &'a [f64],
    /// `A S x_i` for every frame, zero outside `W`.
    predictions: &'a [Vec<Vec<f64>>],
    /// Row offsets of each frame.
    offsets: Vec<Vec<usize>>,
    rows: usize,
    col_scale: Vec<f64>,
}

impl JointOperator<'_> {
    fn n(&self) -> usize {
        self.geo.pixels()
    }

    fn gain_col(&self) -> usize {
        self.geo.groups() * self.n()
    }
}

impl LinearOperator for JointOperator<'_> {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.col_scale.len()
    }

    fn apply_add(&self, z: &[f64], y: &mut [f64]) {
        let n = self.n();
        let dz: Vec<f64> = z.iter().zip(&self.col_scale).map(|(a, s)| a * s).collect();
        let (dg, dd) = dz[self.gain_col()..].split_at(n);
        let mut pred = vec![0.0; n];
        for i in 0..self.geo.groups() {
            let dx = &dz[i * n..(i + 1) * n];
            for j in 0..self.geo.frames_in(i) {
                self.geo.predict(i, j, dx, &mut pred);
                let w = self.geo.weight(i, j).as_slice();
                let a = &self.predictions[i][j];
                let out = &mut y[self.offsets[i][j]..self.offsets[i][j] + n];
                for p in 0..n {
                    if w[p] {
                        out[p] += self.gain[p] * pred[p] + a[p] * dg[p] + dd[p];
                    }
                }
            }
        }
    }

    fn adjoint_add(&self, y: &[f64], z: &mut [f64]) {
        let n = self.n();
        let mut acc = vec![0.0; z.len()];
        let mut v = vec![0.0; n];
        let gc = self.gain_col();
        for i in 0..self.geo.groups() {
            for j in 0..self.geo.frames_in(i) {
                let w = self.geo.weight(i, j).as_slice();
                let a = &self.predictions[i][j];
                let r = &y[self.offsets[i][j]..self.offsets[i][j] + n];
                for p in 0..n {
                    if w[p] {
                        v[p] = self.gain[p] * r[p];
                        acc[gc + p] += a[p] * r[p];
                        acc[gc + n + p] += r[p];
                    } else {
                        v[p] = 0.0;
                    }
                }
                self.geo.predict_adjoint_add(i, j, &v, &mut acc[i * n..(i + 1) * n]);
            }
        }
        for ((zi, ai), s) in z.iter_mut().zip(&acc).zip(&self.col_scale) {
            *zi += ai * s;
        }
    }
}

pub(crate) struct JointStep {
    pub x: Vec<ImageGrid>,
    pub map: GainOffsetMap,
    pub objective: f64,
}

/// One damped Gauss–Newton step on the joint problem. Returns `None` when no
/// trial step lowers the objective.
pub(crate) fn joint_step(
    obs: &ObservationSet,
    geo: &Geometry,
    x: &[ImageGrid],
    map: &GainOffsetMap,
    current_objective: f64,
    iterations: usize,
) -> Result<Option<JointStep>> {
    let (h, w) = obs.dims();
    let n = h * w;
    let groups = obs.groups.len();
    let predictions: Vec<Vec<Vec<f64>>> = (0..groups)
        .into_par_iter()
        .map(|i| {
            (0..obs.groups[i].len())
                .map(|j| {
                    let mut out = vec![0.0; n];
                    geo.predict(i, j, x[i].values(), &mut out);
                    out
                })
                .collect()
        })
        .collect();
    let mut offsets = Vec::with_capacity(groups);
    let mut rows = 0;
    for group in &obs.groups {
        offsets.push(
            (0..group.len())
                .map(|_| {
                    rows += n;
                    rows - n
                })
                .collect::<Vec<_>>(),
        );
    }

    // Residual and column norms.
    let g = map.gain.values();
    let d = map.offset.values();
    let mut rhs = vec![0.0; rows];
    let cols = (groups + 2) * n;
    let mut norm_sq = vec![0.0; cols];
    let g_sq: Vec<f64> = g.iter().map(|v| v * v).collect();
    for i in 0..groups {
        for (j, y) in obs.groups[i].iter().enumerate() {
            let wm = geo.weight(i, j).as_slice();
            let a = &predictions[i][j];
            let off = offsets[i][j];
            let mut masked_g = vec![0.0; n];
            for p in 0..n {
                if wm[p] {
                    rhs[off + p] = y.values()[p] - (g[p] * a[p] + d[p]);
                    norm_sq[groups * n + p] += a[p] * a[p];
                    norm_sq[(groups + 1) * n + p] += 1.0;
                    masked_g[p] = g_sq[p];
                }
            }
            // Σ_p W g² B_pq: a cheap positive proxy for the column norm of x_i.
            geo.predict_adjoint_add(i, j, &masked_g, &mut norm_sq[i * n..(i + 1) * n]);
        }
    }
    let col_scale: Vec<f64> = norm_sq
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 })
        .collect();

    let op = JointOperator {
        geo,
        gain: g,
        predictions: &predictions,
        offsets,
        rows,
        col_scale,
    };
    let opts = LsqrOptions {
        max_iterations: iterations,
        ..Default::default()
    };
    let sol = lsqr(&op, &rhs, None, &opts);
    let delta: Vec<f64> = sol.x.iter().zip(&op.col_scale).map(|(a, s)| a * s).collect();

    let mut step = 1.0;
    for _ in 0..4 {
        let trial_x: Vec<ImageGrid> = (0..groups)
            .map(|i| {
                let vals = x[i]
                    .values()
                    .iter()
                    .zip(&delta[i * n..(i + 1) * n])
                    .map(|(v, dv)| v + step * dv)
                    .collect();
                ImageGrid::from_vec(h, w, vals)
            })
            .collect::<Result<_>>()?;
        let dg = &delta[groups * n..(groups + 1) * n];
        let dd = &delta[(groups + 1) * n..];
        let gain: Vec<f64> = g.iter().zip(dg).map(|(v, dv)| v + step * dv).collect();
        if gain.iter().any(|&v| !(v > 0.0)) {
            step *= 0.5;
            continue;
        }
        let offset = d.iter().zip(dd).map(|(v, dv)| v + step * dv).collect();
        let trial_map = GainOffsetMap::new(
            ImageGrid::from_vec(h, w, gain)?,
            ImageGrid::from_vec(h, w, offset)?,
            map.support.clone(),
        )?;
        let objective = geo.objective(obs, &trial_x, &trial_map);
        if objective < current_objective {
            return Ok(Some(JointStep {
                x: trial_x,
                map: trial_map,
                objective,
            }));
        }
        step *= 0.5;
    }
    Ok(None)
}
