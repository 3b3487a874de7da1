use nalgebra::Matrix3;

use crate::error::{NucError, Result};

/// Smallest |det H| accepted as invertible.
pub const MIN_DETERMINANT: f64 = 1e-12;

/// 3x3 projective transform with `H[2][2] == 1`.
///
/// A warp by `H` evaluates the source image at `(H1·e / H3·e, H2·e / H3·e)` for every
/// output pixel `e = (s, t, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Builds a canonically normalized homography, rejecting singular matrices.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(NucError::InvalidTransform("non-finite entry".into()));
        }
        let corner = m[(2, 2)];
        if corner.abs() < 1e-12 {
            return Err(NucError::InvalidTransform(format!(
                "bottom-right entry {corner:e} cannot be normalized"
            )));
        }
        let mut m = m / corner;
        m[(2, 2)] = 1.0;
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= MIN_DETERMINANT {
            return Err(NucError::InvalidTransform(format!(
                "singular homography (det = {det:e})"
            )));
        }
        Ok(Homography(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Pure translation: the warp samples the source at `(s + tx, t + ty)`.
    pub fn translation(tx: f64, ty: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = tx;
        m[(1, 2)] = ty;
        Homography(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// Entries in row-major order.
    pub fn entries(&self) -> [f64; 9] {
        let r = self.rows();
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Projective denominator `H3·e` at `(s, t)`.
    #[inline]
    pub fn denominator(&self, s: f64, t: f64) -> f64 {
        let m = &self.0;
        m[(2, 0)] * s + m[(2, 1)] * t + m[(2, 2)]
    }

    /// Maps `(s, t)`; `None` when the point projects to infinity.
    #[inline]
    pub fn apply(&self, s: f64, t: f64) -> Option<(f64, f64)> {
        let m = &self.0;
        let w = self.denominator(s, t);
        if w.abs() < 1e-12 {
            return None;
        }
        let x = m[(0, 0)] * s + m[(0, 1)] * t + m[(0, 2)];
        let y = m[(1, 0)] * s + m[(1, 1)] * t + m[(1, 2)];
        Some((x / w, y / w))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| NucError::InvalidTransform("matrix is not invertible".into()))?;
        Homography::new(inv)
    }

    /// `self ∘ other`: warping by the result samples at `self(other(e))`.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Homography::new(self.0 * other.0)
    }

    /// Largest displacement `|H(c) - c|` over the four corner pixel centers of a
    /// `height x width` image.
    pub fn max_corner_displacement(&self, height: usize, width: usize) -> f64 {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
            .into_iter()
            .map(|(s, t)| match self.apply(s, t) {
                Some((x, y)) => ((x - s).powi(2) + (y - t).powi(2)).sqrt(),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Mean distance between where `self` and `other` send the image corners.
    pub fn corner_transfer_error(&self, other: &Homography, height: usize, width: usize) -> f64 {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
        let total: f64 = corners
            .iter()
            .map(|&(s, t)| match (self.apply(s, t), other.apply(s, t)) {
                (Some((a, b)), Some((c, d))) => ((a - c).powi(2) + (b - d).powi(2)).sqrt(),
                _ => f64::INFINITY,
            })
            .sum();
        total / 4.0
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.0 - other.0).amax()
    }
}

impl Default for Homography {
    fn default() -> Self {
        Homography::identity()
    }
}
