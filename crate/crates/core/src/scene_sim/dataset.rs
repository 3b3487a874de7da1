use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NucError, Result};
use crate::grid::{convolve, Homography, ImageGrid, Mask, Psf, WarpPlan};
use crate::scene_sim::hover::{sample_homography, HoverModel, HoverPose};
use crate::scene_sim::profile::{make_profile, CorruptionProfile, ProfileKind, DEFAULT_SNR};
use crate::scene_sim::scene::textured_scene;

const HOVER_STREAM: u64 = 0x243F_6A88_85A3_08D3;
const NOISE_STREAM: u64 = 0x1319_8A2E_0370_7344;
const SCENE_STREAM: u64 = 0xA409_3822_299F_31D0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Number of disjoint fields of view (groups).
    pub fovs: usize,
    /// Observations per group.
    pub k: usize,
    /// Side length of each square observation.
    pub size: usize,
    pub hover: HoverModel,
    pub profile: ProfileKind,
    pub snr: f64,
    pub psf: Psf,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            fovs: 8,
            k: 8,
            size: 66,
            hover: HoverModel::default(),
            profile: ProfileKind::Radial,
            snr: DEFAULT_SNR,
            psf: Psf::delta(),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fovs == 0 || self.k == 0 {
            return Err(NucError::Config("fovs and k must be at least 1".into()));
        }
        if self.size < 3 {
            return Err(NucError::Config(format!("size {} is below 3", self.size)));
        }
        if !(self.snr > 0.0) {
            return Err(NucError::Config(format!("snr {} must be positive", self.snr)));
        }
        self.hover.validate()
    }

    /// Tile layout `(rows, cols)` of the procedural mosaic.
    pub fn mosaic_layout(&self) -> (usize, usize) {
        let cols = (self.fovs as f64).sqrt().ceil() as usize;
        let rows = self.fovs.div_ceil(cols);
        (rows, cols)
    }
}

/// The solver-facing part of a dataset: corrupted frames, grouped by field of view.
///
/// Frame 0 of every group defines that group's pivot coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub height: usize,
    pub width: usize,
    pub groups: Vec<Vec<ImageGrid>>,
}

impl ObservationSet {
    pub fn new(groups: Vec<Vec<ImageGrid>>) -> Result<Self> {
        let first = groups
            .first()
            .and_then(|g| g.first())
            .ok_or_else(|| NucError::Config("observation set is empty".into()))?;
        let (height, width) = first.dims();
        for group in &groups {
            if group.is_empty() {
                return Err(NucError::Config("empty observation group".into()));
            }
            for frame in group {
                if frame.dims() != (height, width) {
                    return Err(NucError::Dimensions("observations differ in size".into()));
                }
            }
        }
        Ok(ObservationSet { height, width, groups })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageGrid> {
        self.groups.iter().flatten()
    }
}

/// Everything the simulation knows and the solver must not see.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub pivots: Vec<ImageGrid>,
    pub homographies: Vec<Vec<Homography>>,
    pub poses: Vec<Vec<HoverPose>>,
    pub profile: CorruptionProfile,
    /// True visibility masks `W_ij` of every observation.
    pub masks: Vec<Vec<Mask>>,
    /// Top-left corner of each group's crop in the source mosaic.
    pub origins: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: ObservationSet,
    pub truth: GroundTruth,
}

/// Forward model of one frame: `y = g ⊙ A(S^H x) + d + n`, with `n ~ N(0, σ²)` and
/// `σ = std(A S^H x) / snr`.
pub fn corrupt(
    x: &ImageGrid,
    h: &Homography,
    profile: &CorruptionProfile,
    psf: &Psf,
    rng: &mut ChaCha8Rng,
) -> Result<ImageGrid> {
    if profile.dims() != x.dims() {
        return Err(NucError::Dimensions("profile and scene differ in size".into()));
    }
    let plan = WarpPlan::new(h, x.mask(), x.dims());
    if plan.valid().count() == 0 {
        return Err(NucError::EmptyOverlap("warped frame has no valid pixels".into()));
    }
    let warped = plan.apply_image(x)?;
    let signal = convolve(&warped, psf)?;
    if signal.valid_count() == 0 {
        return Err(NucError::EmptyOverlap("blurred frame has no valid pixels".into()));
    }
    let sigma = if profile.noise_snr.is_finite() {
        signal.std().unwrap_or(0.0) / profile.noise_snr
    } else {
        0.0
    };
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| NucError::Config(format!("noise distribution: {e}")))?;
    let g = profile.gain.values();
    let d = profile.offset.values();
    let values: Vec<f64> = signal
        .values()
        .iter()
        .zip(signal.mask().as_slice())
        .enumerate()
        .map(|(p, (&v, &ok))| {
            if !ok {
                return 0.0;
            }
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            g[p] * v + d[p] + n
        })
        .collect();
    ImageGrid::with_mask(values, signal.mask().clone())
}

/// Procedural mosaic holding one tile per field of view.
pub fn synthetic_mosaic(cfg: &SimulationConfig) -> Result<ImageGrid> {
    let (rows, cols) = cfg.mosaic_layout();
    textured_scene(rows * cfg.size, cols * cfg.size, cfg.seed ^ SCENE_STREAM)
}

/// Crops `fovs` disjoint tiles from `mosaic` and synthesizes `k` frames of each.
pub fn build_dataset(mosaic: &ImageGrid, cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let size = cfg.size;
    let (tile_rows, tile_cols) = (mosaic.height() / size, mosaic.width() / size);
    if tile_rows * tile_cols < cfg.fovs {
        return Err(NucError::Config(format!(
            "mosaic {}x{} holds {} disjoint {size}x{size} tiles, {} needed",
            mosaic.height(),
            mosaic.width(),
            tile_rows * tile_cols,
            cfg.fovs
        )));
    }
    let mut pivots = Vec::with_capacity(cfg.fovs);
    let mut origins = Vec::with_capacity(cfg.fovs);
    for i in 0..cfg.fovs {
        let origin = ((i / tile_cols) * size, (i % tile_cols) * size);
        let tile = mosaic.crop(origin.0, origin.1, size, size)?;
        if tile.valid_count() != tile.len() {
            return Err(NucError::Config(format!("mosaic tile {i} has invalid pixels")));
        }
        pivots.push(tile);
        origins.push(origin);
    }

    let all: Vec<f64> = pivots.iter().flat_map(|p| p.values().iter().copied()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let scene_std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();

    let mut hover = cfg.hover;
    hover.seed = cfg.seed ^ HOVER_STREAM;
    let profile = make_profile(cfg.profile, size, size, scene_std)?
        .with_snr(cfg.snr)
        .with_seed(cfg.seed ^ NOISE_STREAM);

    let mut hover_rng = ChaCha8Rng::seed_from_u64(hover.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut groups = Vec::with_capacity(cfg.fovs);
    let mut homographies = Vec::with_capacity(cfg.fovs);
    let mut poses = Vec::with_capacity(cfg.fovs);
    let mut masks = Vec::with_capacity(cfg.fovs);
    for pivot in &pivots {
        let (mut frames, mut hs, mut ps, mut ms) = (vec![], vec![], vec![], vec![]);
        for j in 0..cfg.k {
            let (h, pose) = if j == 0 {
                (Homography::identity(), HoverPose::default())
            } else {
                sample_homography(&hover, size, size, &mut hover_rng)?
            };
            let y = corrupt(pivot, &h, &profile, &cfg.psf, &mut noise_rng)?;
            ms.push(y.mask().clone());
            frames.push(y);
            hs.push(h);
            ps.push(pose);
        }
        groups.push(frames);
        homographies.push(hs);
        poses.push(ps);
        masks.push(ms);
    }

    Ok(Dataset {
        observations: ObservationSet::new(groups)?,
        truth: GroundTruth {
            pivots,
            homographies,
            poses,
            profile,
            masks,
            origins,
        },
    })
}

/// Procedural mosaic plus [`build_dataset`].
pub fn simulate(cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mosaic = synthetic_mosaic(cfg)?;
    build_dataset(&mosaic, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(fovs: usize, k: usize) -> SimulationConfig {
        SimulationConfig {
            fovs,
            k,
            size: 20,
            ..Default::default()
        }
    }

    #[test]
    fn group_structure() {
        let ds = simulate(&small(3, 4)).unwrap();
        assert_eq!(ds.observations.groups.len(), 3);
        assert_eq!(ds.observations.total(), 12);
        for hs in &ds.truth.homographies {
            assert_eq!(hs[0], Homography::identity());
        }
    }

    #[test]
    fn single_frame_dataset() {
        let ds = simulate(&small(1, 1)).unwrap();
        assert_eq!(ds.observations.total(), 1);
        assert_eq!(ds.truth.homographies[0][0], Homography::identity());
        assert_eq!(ds.observations.groups[0][0].valid_count(), 400);
    }

    #[test]
    fn deterministic() {
        assert_eq!(simulate(&small(2, 3)).unwrap(), simulate(&small(2, 3)).unwrap());
    }

    #[test]
    fn mosaic_too_small() {
        let mosaic = ImageGrid::zeros(30, 30).unwrap();
        assert!(matches!(build_dataset(&mosaic, &small(2, 2)), Err(NucError::Config(_))));
    }

    #[test]
    fn corrupt_identity_model() {
        let x = ImageGrid::from_fn(6, 6, |r, c| (r * 6 + c) as f64).unwrap();
        let profile = CorruptionProfile::identity(6, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = corrupt(&x, &Homography::identity(), &profile, &Psf::delta(), &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn corrupt_constant_scene() {
        let x = ImageGrid::filled(5, 5, 7.0).unwrap();
        let profile = crate::scene_sim::profile::make_sine_profile(5, 5, 2.0)
            .unwrap()
            .with_snr(f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = corrupt(&x, &Homography::identity(), &profile, &Psf::delta(), &mut rng).unwrap();
        for p in 0..25 {
            let expected = 7.0 * profile.gain.values()[p] + profile.offset.values()[p];
            assert!((y.values()[p] - expected).abs() < 1e-12);
        }
    }
}
