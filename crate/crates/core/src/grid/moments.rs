//! Per-pixel masked statistics over a stack of images.
//!
//! With `W` the per-sample mask and `n_p = Σ W`, the mean is `<A> = (1/n_p) Σ W A`,
//! and variance / covariance use the same `1/n_p` (population) normalization.

use crate::error::{NucError, Result};
use crate::grid::image::{check_same_dims, Coverage, ImageGrid, Mask};

#[derive(Debug, Clone)]
pub struct MomentFields {
    pub coverage: Coverage,
    /// Valid where `n_p >= 1`.
    pub mean: ImageGrid,
    /// Valid where `n_p >= 1`.
    pub variance: ImageGrid,
}

#[derive(Debug, Clone)]
pub struct PairMomentFields {
    pub coverage: Coverage,
    pub mean_a: ImageGrid,
    pub mean_b: ImageGrid,
    pub var_a: ImageGrid,
    pub var_b: ImageGrid,
    pub cov_ab: ImageGrid,
}

fn stack_dims<T>(stack: &[T], dims: impl Fn(&T) -> Vec<(usize, usize)>) -> Result<(usize, usize)> {
    let first = stack
        .first()
        .ok_or_else(|| NucError::Dimensions("empty stack".into()))?;
    let d = dims(first)[0];
    for item in stack {
        for other in dims(item) {
            check_same_dims(d, other)?;
        }
    }
    Ok(d)
}

/// Mean and variance of each pixel over the samples whose mask is set.
/// Pixels with `n_p = 0` come back invalid.
pub fn masked_moments(stack: &[(&ImageGrid, &Mask)]) -> Result<MomentFields> {
    let (h, w) = stack_dims(stack, |(img, m)| vec![img.dims(), m.dims()])?;
    let n = h * w;
    let effective: Vec<Mask> = stack.iter().map(|(img, m)| img.mask().and(m)).collect::<Result<_>>()?;
    let coverage = Coverage::from_masks(h, w, effective.iter())?;
    let mut sum = vec![0.0; n];
    for ((img, _), m) in stack.iter().zip(&effective) {
        for p in 0..n {
            if m.as_slice()[p] {
                sum[p] += img.values()[p];
            }
        }
    }
    let counts = coverage.as_slice();
    let mean: Vec<f64> = (0..n)
        .map(|p| if counts[p] > 0 { sum[p] / counts[p] as f64 } else { 0.0 })
        .collect();
    let mut ss = vec![0.0; n];
    for ((img, _), m) in stack.iter().zip(&effective) {
        for p in 0..n {
            if m.as_slice()[p] {
                let d = img.values()[p] - mean[p];
                ss[p] += d * d;
            }
        }
    }
    let variance: Vec<f64> = (0..n)
        .map(|p| if counts[p] > 0 { ss[p] / counts[p] as f64 } else { 0.0 })
        .collect();
    let valid = coverage.at_least(1);
    Ok(MomentFields {
        mean: ImageGrid::with_mask(mean, valid.clone())?,
        variance: ImageGrid::with_mask(variance, valid)?,
        coverage,
    })
}

/// Joint moments of paired samples `(a, b)`. Outputs are valid where `n_p >= min_count`.
pub fn masked_pair_moments(stack: &[(&ImageGrid, &ImageGrid, &Mask)], min_count: u32) -> Result<PairMomentFields> {
    let (h, w) = stack_dims(stack, |(a, b, m)| vec![a.dims(), b.dims(), m.dims()])?;
    let n = h * w;
    let effective: Vec<Mask> = stack
        .iter()
        .map(|(a, b, m)| a.mask().and(b.mask())?.and(m))
        .collect::<Result<_>>()?;
    let coverage = Coverage::from_masks(h, w, effective.iter())?;
    let counts = coverage.as_slice();
    let (mut sa, mut sb) = (vec![0.0; n], vec![0.0; n]);
    for ((a, b, _), m) in stack.iter().zip(&effective) {
        for p in 0..n {
            if m.as_slice()[p] {
                sa[p] += a.values()[p];
                sb[p] += b.values()[p];
            }
        }
    }
    let avg = |s: &[f64], p: usize| if counts[p] > 0 { s[p] / counts[p] as f64 } else { 0.0 };
    let ma: Vec<f64> = (0..n).map(|p| avg(&sa, p)).collect();
    let mb: Vec<f64> = (0..n).map(|p| avg(&sb, p)).collect();
    let (mut vaa, mut vbb, mut vab) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for ((a, b, _), m) in stack.iter().zip(&effective) {
        for p in 0..n {
            if m.as_slice()[p] {
                let da = a.values()[p] - ma[p];
                let db = b.values()[p] - mb[p];
                vaa[p] += da * da;
                vbb[p] += db * db;
                vab[p] += da * db;
            }
        }
    }
    let valid = coverage.at_least(min_count.max(1));
    let field = |v: Vec<f64>| ImageGrid::with_mask(v, valid.clone());
    Ok(PairMomentFields {
        mean_a: field(ma)?,
        mean_b: field(mb)?,
        var_a: field((0..n).map(|p| avg(&vaa, p)).collect())?,
        var_b: field((0..n).map(|p| avg(&vbb, p)).collect())?,
        cov_ab: field((0..n).map(|p| avg(&vab, p)).collect())?,
        coverage,
    })
}
