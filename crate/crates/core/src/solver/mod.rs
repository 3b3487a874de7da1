//! Alternating minimization of `Σ_ij ‖W_ij (g ⊙ A S^{H_ij} x_i + d − y_j)‖²` over
//! scenes `x_i`, gain `g`, offset `d` and homographies `H_ij`.
//!
//! Each cycle runs registration, the pixel-wise gain/offset regression, the
//! per-group scene least-squares solve, an optional joint refinement, and finally
//! re-normalizes to mean gain 1 and mean offset 0.

mod joint;
mod model;
mod stages;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{NucError, Result};
use crate::grid::{Homography, ImageGrid, Mask, Psf};
use crate::registration::RegistrationConfig;
use crate::scene_sim::ObservationSet;

pub use model::objective;
pub use stages::{apply_ambiguity, clean_observation, init_gd, initial_nuc, normalize_parts, Ambiguity, PairFailure};

use model::Geometry;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub outer_iterations: usize,
    /// LSQR iterations per scene update.
    pub lsqr_iterations: usize,
    /// Fewest samples for a pixel's gain/offset regression.
    pub min_pixel_pairs: usize,
    /// Smallest prediction variance accepted by the regression. `None` uses
    /// `1e-9` times the pooled variance of the observations.
    pub variance_floor: Option<f64>,
    pub registration: RegistrationConfig,
    pub normalize_each_cycle: bool,
    /// Search radius of the initial template matching.
    pub template_radius: usize,
    /// Stop once a full cycle lowers the objective by less than this fraction.
    pub relative_tolerance: f64,
    /// LSQR iterations of the joint refinement; 0 disables it.
    pub joint_iterations: usize,
    pub psf: Psf,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            outer_iterations: 10,
            lsqr_iterations: 20,
            min_pixel_pairs: 2,
            variance_floor: None,
            registration: RegistrationConfig::default(),
            normalize_each_cycle: true,
            template_radius: 3,
            relative_tolerance: 1e-8,
            joint_iterations: 300,
            psf: Psf::delta(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 || self.lsqr_iterations == 0 {
            return Err(NucError::Config(
                "outer_iterations and lsqr_iterations must be at least 1".into(),
            ));
        }
        if let Some(f) = self.variance_floor {
            if !(f >= 0.0) {
                return Err(NucError::Config(format!("invalid variance floor {f}")));
            }
        }
        self.registration.validate()
    }
}

/// Per-pixel gain and offset with the pixels whose estimate is trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct GainOffsetMap {
    pub gain: ImageGrid,
    pub offset: ImageGrid,
    pub support: Mask,
}

impl GainOffsetMap {
    pub fn new(gain: ImageGrid, offset: ImageGrid, support: Mask) -> Result<Self> {
        if gain.dims() != offset.dims() || gain.dims() != support.dims() {
            return Err(NucError::Dimensions("gain, offset and support differ in size".into()));
        }
        for p in 0..gain.len() {
            if support.as_slice()[p] && !(gain.values()[p] > 0.0) {
                return Err(NucError::Config(format!("gain at pixel {p} is not positive")));
            }
        }
        Ok(GainOffsetMap { gain, offset, support })
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        GainOffsetMap::new(
            ImageGrid::filled(height, width, 1.0)?,
            ImageGrid::zeros(height, width)?,
            Mask::filled(height, width, true),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gain.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Registration,
    GainOffset,
    Scene,
    Joint,
    Normalize,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Registration => "registration",
            Stage::GainOffset => "gain_offset",
            Stage::Scene => "scene",
            Stage::Joint => "joint",
            Stage::Normalize => "normalize",
        }
    }
}

/// One entry of the progress log. `cycle` 0 is the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub cycle: usize,
    pub stage: Stage,
    pub objective: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// One scene estimate per group, in the coordinates of the group's first frame.
    pub x: Vec<ImageGrid>,
    pub map: GainOffsetMap,
    pub homographies: Vec<Vec<Homography>>,
    /// Objective after every stage, aligned with `stages`.
    pub objective_history: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// Completed cycles.
    pub cycle: usize,
    pub failures: Vec<PairFailure>,
    /// Regression floor used by the gain/offset stage.
    pub variance_floor: f64,
}

impl SolverState {
    /// Builds a state from explicit parts, with an empty history.
    pub fn from_parts(
        x: Vec<ImageGrid>,
        map: GainOffsetMap,
        homographies: Vec<Vec<Homography>>,
        variance_floor: f64,
    ) -> Self {
        SolverState {
            x,
            map,
            homographies,
            objective_history: Vec::new(),
            stages: Vec::new(),
            cycle: 0,
            failures: Vec::new(),
            variance_floor,
        }
    }

    pub fn objective(&self, obs: &ObservationSet, psf: &Psf) -> Result<f64> {
        objective(obs, &self.x, &self.map, &self.homographies, psf)
    }

    /// Visibility masks `W_ij` implied by the current homographies.
    pub fn masks(&self, obs: &ObservationSet, psf: &Psf) -> Result<Vec<Vec<Mask>>> {
        Ok(Geometry::new(obs, &self.homographies, psf)?.masks())
    }

    /// Objective after each gain/offset or scene stage compared with the value
    /// just before it. Returns the first increase found.
    pub fn block_descent_violation(&self) -> Option<(usize, Stage, f64, f64)> {
        self.stages.windows(2).find_map(|w| {
            let (prev, cur) = (w[0], w[1]);
            let block = matches!(cur.stage, Stage::GainOffset | Stage::Scene | Stage::Joint);
            (block && cur.objective > prev.objective).then_some((cur.cycle, cur.stage, prev.objective, cur.objective))
        })
    }
}

/// Default regression floor: `1e-9` of the pooled observation variance.
pub fn default_variance_floor(obs: &ObservationSet) -> f64 {
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
    for v in obs.iter().flat_map(|y| y.valid_values()) {
        sum += v;
        sq += v * v;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    1e-9 * (sq / n as f64 - mean * mean).max(0.0)
}

/// Scene stage: masked least squares for every group, warm-started from the
/// current estimates.
pub fn x_stage(obs: &ObservationSet, state: &SolverState, cfg: &SolverConfig) -> Result<Vec<ImageGrid>> {
    let geo = Geometry::new(obs, &state.homographies, &cfg.psf)?;
    stages::x_stage_with(obs, &geo, &state.x, &state.map, cfg.lsqr_iterations)
}

/// Gain/offset stage: pixel-wise regression of observations on predictions.
pub fn gd_stage(obs: &ObservationSet, state: &SolverState, cfg: &SolverConfig) -> Result<GainOffsetMap> {
    let geo = Geometry::new(obs, &state.homographies, &cfg.psf)?;
    stages::gd_stage_with(
        obs,
        &geo,
        &state.x,
        &state.map,
        cfg.min_pixel_pairs,
        state.variance_floor,
    )
}

/// Registration stage: refines every homography from its previous estimate.
pub fn registration_stage(
    obs: &ObservationSet,
    state: &SolverState,
    cfg: &SolverConfig,
) -> Result<(Vec<Vec<Homography>>, Vec<PairFailure>)> {
    stages::registration_stage_with(obs, &state.x, &state.map, &state.homographies, cfg, false)
}

/// Maps the state onto mean gain 1 and mean offset 0 over its support.
pub fn normalize(state: &mut SolverState) -> Result<Ambiguity> {
    normalize_parts(&mut state.x, &mut state.map)
}

/// Runs the full alternating minimization. `initial` is an approximate gain/offset
/// map (for instance a laboratory calibration); without one, pixel statistics
/// are used.
pub fn solve(obs: &ObservationSet, initial: Option<&GainOffsetMap>, cfg: &SolverConfig) -> Result<SolverState> {
    solve_with_observer(obs, initial, cfg, |_| {})
}

struct Recorder<'a, F: FnMut(&StageRecord)> {
    start: Instant,
    observer: F,
    state: &'a mut SolverState,
}

impl<F: FnMut(&StageRecord)> Recorder<'_, F> {
    fn record(&mut self, cycle: usize, stage: Stage, objective: f64) -> Result<()> {
        if !objective.is_finite() {
            return Err(NucError::Divergence {
                stage: stage.as_str().into(),
                cycle,
                objective,
            });
        }
        let rec = StageRecord {
            cycle,
            stage,
            objective,
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
        };
        log::debug!("cycle {cycle} {}: objective {objective:.6e}", stage.as_str());
        self.state.objective_history.push(objective);
        self.state.stages.push(rec);
        (self.observer)(&rec);
        Ok(())
    }
}

pub fn solve_with_observer(
    obs: &ObservationSet,
    initial: Option<&GainOffsetMap>,
    cfg: &SolverConfig,
    observer: impl FnMut(&StageRecord),
) -> Result<SolverState> {
    cfg.validate()?;
    let dims = obs.dims();
    let floor = cfg.variance_floor.unwrap_or_else(|| default_variance_floor(obs));
    let map = match initial {
        Some(m) if m.dims() != dims => {
            return Err(NucError::Dimensions("initial map does not match the sensor".into()))
        }
        Some(m) => m.clone(),
        None => init_gd(obs, floor)?,
    };
    for p in 0..map.gain.len() {
        if !(map.gain.values()[p] > 0.0) || !map.offset.values()[p].is_finite() {
            return Err(NucError::Config(format!("initial map is invalid at pixel {p}")));
        }
    }
    let x = obs
        .groups
        .iter()
        .map(|g| stages::initial_scene(&g[0], &map))
        .collect::<Result<Vec<_>>>()?;
    let identity: Vec<Vec<Homography>> = obs
        .groups
        .iter()
        .map(|g| vec![Homography::identity(); g.len()])
        .collect();
    let mut state = SolverState::from_parts(x, map, identity, floor);
    normalize(&mut state)?;

    let (hs, failures) = stages::registration_stage_with(obs, &state.x, &state.map, &state.homographies, cfg, true)?;
    state.homographies = hs;
    state.failures.extend(failures);
    let mut geo = Geometry::new(obs, &state.homographies, &cfg.psf)?;
    let mut current = geo.objective(obs, &state.x, &state.map);

    let mut rec_state = state;
    let mut rec = Recorder {
        start: Instant::now(),
        observer,
        state: &mut rec_state,
    };
    rec.record(0, Stage::Init, current)?;

    for cycle in 1..=cfg.outer_iterations {
        let cycle_start = current;

        let (hs, failures) =
            stages::registration_stage_with(obs, &rec.state.x, &rec.state.map, &rec.state.homographies, cfg, false)?;
        rec.state.homographies = hs;
        rec.state.failures.extend(failures);
        geo = Geometry::new(obs, &rec.state.homographies, &cfg.psf)?;
        current = geo.objective(obs, &rec.state.x, &rec.state.map);
        rec.record(cycle, Stage::Registration, current)?;

        let map = stages::gd_stage_with(obs, &geo, &rec.state.x, &rec.state.map, cfg.min_pixel_pairs, floor)?;
        let value = geo.objective(obs, &rec.state.x, &map);
        if value <= current {
            rec.state.map = map;
            current = value;
        } else {
            log::debug!("gain/offset update rejected: {value:e} > {current:e}");
            rec.state.map.support = map.support;
        }
        rec.record(cycle, Stage::GainOffset, current)?;

        let x = stages::x_stage_with(obs, &geo, &rec.state.x, &rec.state.map, cfg.lsqr_iterations)?;
        let value = geo.objective(obs, &x, &rec.state.map);
        if value <= current {
            rec.state.x = x;
            current = value;
        } else {
            log::debug!("scene update rejected: {value:e} > {current:e}");
        }
        rec.record(cycle, Stage::Scene, current)?;

        if cfg.joint_iterations > 0 {
            if let Some(step) =
                joint::joint_step(obs, &geo, &rec.state.x, &rec.state.map, current, cfg.joint_iterations)?
            {
                rec.state.x = step.x;
                rec.state.map.gain = step.map.gain;
                rec.state.map.offset = step.map.offset;
                current = step.objective;
            }
            rec.record(cycle, Stage::Joint, current)?;
        }

        if cfg.normalize_each_cycle || cycle == cfg.outer_iterations {
            if rec.state.map.support.count() > 0 {
                normalize(rec.state)?;
                current = geo.objective(obs, &rec.state.x, &rec.state.map);
            }
            rec.record(cycle, Stage::Normalize, current)?;
        }
        rec.state.cycle = cycle;

        let decrease = cycle_start - current;
        if cycle_start <= 0.0 || decrease < cfg.relative_tolerance * cycle_start {
            log::info!("converged after {cycle} cycles (objective {current:.6e})");
            break;
        }
    }
    Ok(rec_state)
}
