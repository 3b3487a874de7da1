//! Procedural ground-truth scenes: smooth multi-scale random texture quantized to
//! 8-bit gray values spanning the thermographic range of the camera.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grid::ImageGrid;

/// Lowest scene temperature represented by gray value 0.
pub const CELSIUS_LOW: f64 = 27.1;
/// Highest scene temperature represented by gray value [`GRAY_LEVELS`].
pub const CELSIUS_HIGH: f64 = 51.7;
pub const GRAY_LEVELS: f64 = 255.0;

const OCTAVES: [(f64, f64); 3] = [(1.0, 0.35), (2.5, 0.6), (6.0, 1.0)];

/// Smooth random field on `height x width`, quantized to integer gray values 0..=255.
pub fn textured_scene(height: usize, width: usize, seed: u64) -> Result<ImageGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = height * width;
    let mut field = vec![0.0; n];
    for &(sigma, weight) in &OCTAVES {
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut blurred = gaussian_blur(&noise, height, width, sigma);
        let mean = blurred.iter().sum::<f64>() / n as f64;
        let std = (blurred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        blurred.iter_mut().for_each(|v| *v = (*v - mean) / std.max(1e-300));
        field.iter_mut().zip(&blurred).for_each(|(f, b)| *f += weight * b);
    }
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-300);
    let values = field.iter().map(|v| ((v - lo) / span * GRAY_LEVELS).round()).collect();
    ImageGrid::from_vec(height, width, values)
}

/// Separable Gaussian blur with mirrored borders.
pub(crate) fn gaussian_blur(values: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let reflect = |i: i64, len: usize| -> usize {
        let len = len as i64;
        let mut i = i;
        if len == 1 {
            return 0;
        }
        loop {
            if i < 0 {
                i = -i;
            } else if i >= len {
                i = 2 * (len - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut tmp = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            tmp[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[r * width + reflect(c as i64 + k as i64 - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect(r as i64 + k as i64 - radius, height) * width + c])
                .sum();
        }
    }
    out
}
