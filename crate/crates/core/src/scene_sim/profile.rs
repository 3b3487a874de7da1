use serde::{Deserialize, Serialize};

use crate::error::{NucError, Result};
use crate::grid::ImageGrid;

/// Default signal-to-noise ratio of simulated observations.
pub const DEFAULT_SNR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Radial,
    Sine,
    Custom,
}

impl ProfileKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileKind::Radial => "radial",
            ProfileKind::Sine => "sine",
            ProfileKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = NucError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(ProfileKind::Radial),
            "sine" => Ok(ProfileKind::Sine),
            "custom" => Ok(ProfileKind::Custom),
            other => Err(NucError::Config(format!("unknown profile kind '{other}'"))),
        }
    }
}

/// Sensor gain/offset fields used to corrupt clean frames, plus the noise level.
///
/// Gain has mean 1 and offset mean 0 over the full sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionProfile {
    pub kind: ProfileKind,
    pub gain: ImageGrid,
    pub offset: ImageGrid,
    pub noise_snr: f64,
    pub seed: u64,
}

impl CorruptionProfile {
    /// User-supplied fields, normalized to mean gain 1 and mean offset 0.
    pub fn custom(gain: ImageGrid, offset: ImageGrid, noise_snr: f64) -> Result<Self> {
        if gain.dims() != offset.dims() {
            return Err(NucError::Dimensions("gain and offset differ in size".into()));
        }
        if gain.valid_count() != gain.len() || offset.valid_count() != offset.len() {
            return Err(NucError::Config("corruption fields must be fully valid".into()));
        }
        if gain.values().iter().any(|&g| g <= 0.0) {
            return Err(NucError::Config("gain must be positive".into()));
        }
        let gm = gain.mean().unwrap_or(1.0);
        let dm = offset.mean().unwrap_or(0.0);
        Ok(CorruptionProfile {
            kind: ProfileKind::Custom,
            gain: gain.map(|g| g / gm)?,
            offset: offset.map(|d| d - dm)?,
            noise_snr,
            seed: 0,
        })
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        Ok(CorruptionProfile {
            kind: ProfileKind::Custom,
            gain: ImageGrid::filled(height, width, 1.0)?,
            offset: ImageGrid::zeros(height, width)?,
            noise_snr: f64::INFINITY,
            seed: 0,
        })
    }

    pub fn with_snr(mut self, snr: f64) -> Self {
        self.noise_snr = snr;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gain.dims()
    }
}

fn check_dims(h: usize, w: usize, scene_std: f64) -> Result<()> {
    if h < 3 || w < 3 {
        return Err(NucError::Dimensions(format!("profile needs at least 3x3, got {h}x{w}")));
    }
    if !(scene_std > 0.0) || !scene_std.is_finite() {
        return Err(NucError::Config(format!("scene std {scene_std} must be positive")));
    }
    Ok(())
}

fn centered(h: usize, w: usize) -> impl Fn(usize) -> (f64, f64) {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    move |p| {
        let (t, s) = ((p / w) as f64, (p % w) as f64);
        ((s - cx) / cx, (t - cy) / cy)
    }
}

/// Radial profile before mean normalization: gain is a centered paraboloid spanning
/// exactly [0.7, 1.3]; offset is `4·std·(0.5·u² + v²)` in normalized coordinates.
pub fn radial_raw(h: usize, w: usize, scene_std: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(h, w, scene_std)?;
    let uv = centered(h, w);
    let q: Vec<f64> = (0..h * w)
        .map(|p| {
            let (u, v) = uv(p);
            u * u + v * v
        })
        .collect();
    let qmin = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let qmax = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gain = q.iter().map(|&qi| 0.7 + 0.6 * (qi - qmin) / (qmax - qmin)).collect();
    let offset = (0..h * w)
        .map(|p| {
            let (u, v) = uv(p);
            4.0 * scene_std * (0.5 * u * u + v * v)
        })
        .collect();
    Ok((gain, offset))
}

/// Sine profile before mean normalization.
pub fn sine_raw(h: usize, w: usize, scene_std: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(h, w, scene_std)?;
    let (mut gain, mut offset) = (Vec::with_capacity(h * w), Vec::with_capacity(h * w));
    for t in 0..h {
        for s in 0..w {
            let (s, t) = (s as f64, t as f64);
            gain.push(1.0 + 0.3 * (s / 2.5).sin() * (t / 7.5).sin());
            offset.push(3.5 * scene_std * ((s + t) / 5.0).sin() * ((s - t) / 10.0).sin());
        }
    }
    Ok((gain, offset))
}

fn mean_shifted(mut v: Vec<f64>, target: f64) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x += target - mean);
    v
}

fn from_raw(kind: ProfileKind, h: usize, w: usize, raw: (Vec<f64>, Vec<f64>)) -> Result<CorruptionProfile> {
    Ok(CorruptionProfile {
        kind,
        gain: ImageGrid::from_vec(h, w, mean_shifted(raw.0, 1.0))?,
        offset: ImageGrid::from_vec(h, w, mean_shifted(raw.1, 0.0))?,
        noise_snr: DEFAULT_SNR,
        seed: 0,
    })
}

pub fn make_radial_profile(h: usize, w: usize, scene_std: f64) -> Result<CorruptionProfile> {
    from_raw(ProfileKind::Radial, h, w, radial_raw(h, w, scene_std)?)
}

pub fn make_sine_profile(h: usize, w: usize, scene_std: f64) -> Result<CorruptionProfile> {
    from_raw(ProfileKind::Sine, h, w, sine_raw(h, w, scene_std)?)
}

pub fn make_profile(kind: ProfileKind, h: usize, w: usize, scene_std: f64) -> Result<CorruptionProfile> {
    match kind {
        ProfileKind::Radial => make_radial_profile(h, w, scene_std),
        ProfileKind::Sine => make_sine_profile(h, w, scene_std),
        ProfileKind::Custom => Err(NucError::Config(
            "custom profiles are built with CorruptionProfile::custom".into(),
        )),
    }
}
