//! Hover-error homographies of a downward-looking camera over flat ground.
//!
//! The pose perturbation `(R, t)` of the camera induces the plane homography
//! `H = K (R + t nᵀ / z) K⁻¹` with ground normal `n = (0, 0, 1)` at distance `z`
//! (the altitude). `R` composes yaw, pitch and roll with the two small axis-tilt
//! angles that align the optical axis with the inertial vertical.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NucError, Result};
use crate::grid::Homography;

/// Draws attempted before [`sample_homography`] gives up.
pub const MAX_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoverModel {
    /// Vertical hover error, drawn from `±t_z_range` meters.
    pub t_z_range: f64,
    /// Yaw, drawn from `±yaw_range_deg` degrees.
    pub yaw_range_deg: f64,
    /// Roll, pitch and both axis tilts, each from `±tilt_range_deg` degrees.
    pub tilt_range_deg: f64,
    /// Largest accepted corner displacement in pixels; also bounds the lateral draw.
    pub max_translation: f64,
    pub altitude: f64,
    /// Full horizontal field of view of the sensor.
    pub fov_deg: f64,
    pub seed: u64,
}

impl Default for HoverModel {
    fn default() -> Self {
        HoverModel {
            t_z_range: 0.5,
            yaw_range_deg: 5.0,
            tilt_range_deg: 0.05,
            max_translation: 1.0,
            altitude: 60.0,
            fov_deg: 45.0,
            seed: 0,
        }
    }
}

impl HoverModel {
    /// A model that only ever produces the identity.
    pub fn still() -> Self {
        HoverModel {
            t_z_range: 0.0,
            yaw_range_deg: 0.0,
            tilt_range_deg: 0.0,
            max_translation: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.t_z_range,
            self.yaw_range_deg,
            self.tilt_range_deg,
            self.max_translation,
        ];
        if ranges.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(NucError::Config("hover ranges must be finite and nonnegative".into()));
        }
        if !(self.altitude > 0.0) {
            return Err(NucError::Config(format!("altitude {} must be positive", self.altitude)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(NucError::Config(format!("field of view {} out of range", self.fov_deg)));
        }
        Ok(())
    }
}

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Principal point at the image center; focal length from the horizontal FOV.
    pub fn for_sensor(height: usize, width: usize, fov_deg: f64) -> Self {
        let half = (fov_deg / 2.0).to_radians();
        Intrinsics {
            focal: (width as f64 / 2.0) / half.tan(),
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    fn inverse(&self) -> Matrix3<f64> {
        let f = self.focal;
        Matrix3::new(1.0 / f, 0.0, -self.cx / f, 0.0, 1.0 / f, -self.cy / f, 0.0, 0.0, 1.0)
    }
}

/// Camera pose perturbation. Translations in meters, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HoverPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub psi: f64,
    pub xi: f64,
}

fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Plane-induced homography of `pose` for a camera at `altitude` meters.
pub fn pose_homography(pose: &HoverPose, intr: &Intrinsics, altitude: f64) -> Result<Homography> {
    let r = rot_z(pose.yaw) * rot_y(pose.pitch) * rot_x(pose.roll) * rot_x(pose.psi) * rot_y(pose.xi);
    let t = Vector3::new(pose.tx, pose.ty, pose.tz);
    let n = Vector3::new(0.0, 0.0, 1.0);
    let m = intr.matrix() * (r + t * n.transpose() / altitude) * intr.inverse();
    Homography::new(m)
}

fn symmetric(rng: &mut impl Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// One unconstrained draw of every pose parameter from its marginal range.
pub fn draw_pose(model: &HoverModel, intr: &Intrinsics, rng: &mut impl Rng) -> HoverPose {
    let lateral = model.max_translation * model.altitude / intr.focal;
    HoverPose {
        tx: symmetric(rng, lateral),
        ty: symmetric(rng, lateral),
        tz: symmetric(rng, model.t_z_range),
        roll: symmetric(rng, model.tilt_range_deg),
        pitch: symmetric(rng, model.tilt_range_deg),
        yaw: symmetric(rng, model.yaw_range_deg),
        psi: symmetric(rng, model.tilt_range_deg),
        xi: symmetric(rng, model.tilt_range_deg),
    }
}

/// Samples hover homographies for a `height x width` sensor, redrawing until the
/// largest corner displacement is within `max_translation` pixels.
pub fn sample_homography(
    model: &HoverModel,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> Result<(Homography, HoverPose)> {
    model.validate()?;
    let intr = Intrinsics::for_sensor(height, width, model.fov_deg);
    for _ in 0..MAX_DRAWS {
        let pose = draw_pose(model, &intr, rng);
        let h = pose_homography(&pose, &intr, model.altitude)?;
        if h.max_corner_displacement(height, width) <= model.max_translation {
            return Ok((h, pose));
        }
    }
    Err(NucError::Config(format!(
        "no hover homography within {} px after {MAX_DRAWS} draws",
        model.max_translation
    )))
}
