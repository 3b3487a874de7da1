//! Bilinear homography resampling as an explicit sparse linear operator.
//!
//! A [`WarpPlan`] records, for every output pixel, the four source taps and weights
//! of the bilinear sample at `H·e`. Forward application and its exact adjoint both
//! read the same taps, so `<apply(u), v> == <u, adjoint(v)>` holds to rounding.

use crate::error::{NucError, Result};
use crate::grid::homography::Homography;
use crate::grid::image::{ImageGrid, Mask};

/// Four (source index, weight) pairs; unused taps carry weight zero.
pub type Taps = [(u32, f64); 4];

#[derive(Debug, Clone)]
pub struct WarpPlan {
    src_dims: (usize, usize),
    dst_dims: (usize, usize),
    taps: Vec<Taps>,
    coords: Vec<(f64, f64)>,
    valid: Mask,
}

/// Resolves the bilinear stencil along one axis. Returns the base index, the
/// fractional weight of the next sample, and whether the next sample is needed.
#[inline]
fn axis_stencil(x: f64, len: usize) -> Option<(usize, f64)> {
    if !x.is_finite() || x < 0.0 || x > (len - 1) as f64 {
        return None;
    }
    let base = x.floor();
    let frac = x - base;
    let base = base as usize;
    if frac > 0.0 && base + 1 >= len {
        return None;
    }
    Some((base, frac))
}

impl WarpPlan {
    /// Plans the warp of a source with validity `src_valid` onto a `dst_dims` grid.
    ///
    /// An output pixel is valid only if every bilinear neighbor with nonzero weight
    /// lies in bounds and is valid in the source.
    pub fn new(h: &Homography, src_valid: &Mask, dst_dims: (usize, usize)) -> Self {
        let (sh, sw) = src_valid.dims();
        let (dh, dw) = dst_dims;
        let n = dh * dw;
        let mut taps = vec![[(0u32, 0.0f64); 4]; n];
        let mut coords = vec![(f64::NAN, f64::NAN); n];
        let mut valid = Mask::filled(dh, dw, false);
        for t in 0..dh {
            for s in 0..dw {
                let p = t * dw + s;
                let Some((x, y)) = h.apply(s as f64, t as f64) else {
                    continue;
                };
                coords[p] = (x, y);
                let (Some((x0, fx)), Some((y0, fy))) = (axis_stencil(x, sw), axis_stencil(y, sh)) else {
                    continue;
                };
                let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
                let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
                if !(src_valid.get(y0, x0) && src_valid.get(y0, x1) && src_valid.get(y1, x0) && src_valid.get(y1, x1)) {
                    continue;
                }
                let idx = |r: usize, c: usize| (r * sw + c) as u32;
                taps[p] = [
                    (idx(y0, x0), (1.0 - fx) * (1.0 - fy)),
                    (idx(y0, x1), fx * (1.0 - fy)),
                    (idx(y1, x0), (1.0 - fx) * fy),
                    (idx(y1, x1), fx * fy),
                ];
                valid.set(t, s, true);
            }
        }
        WarpPlan {
            src_dims: (sh, sw),
            dst_dims,
            taps,
            coords,
            valid,
        }
    }

    pub fn src_dims(&self) -> (usize, usize) {
        self.src_dims
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        self.dst_dims
    }

    /// Output validity.
    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn taps(&self) -> &[Taps] {
        &self.taps
    }

    /// Source coordinates `(s̃, t̃)` sampled by output pixel `p` (row-major index).
    #[inline]
    pub fn sample_point(&self, p: usize) -> (f64, f64) {
        self.coords[p]
    }

    /// `out = S^H src`; invalid outputs are zero.
    pub fn apply(&self, src: &[f64], out: &mut [f64]) {
        debug_assert_eq!(src.len(), self.src_dims.0 * self.src_dims.1);
        debug_assert_eq!(out.len(), self.taps.len());
        for ((o, taps), &ok) in out.iter_mut().zip(&self.taps).zip(self.valid.as_slice()) {
            *o = if ok {
                taps.iter().map(|&(i, w)| w * src[i as usize]).sum()
            } else {
                0.0
            };
        }
    }

    /// `out += (S^H)ᵀ v`, reading `v` only at valid output pixels.
    pub fn adjoint_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.taps.len());
        debug_assert_eq!(out.len(), self.src_dims.0 * self.src_dims.1);
        for ((&val, taps), &ok) in v.iter().zip(&self.taps).zip(self.valid.as_slice()) {
            if ok && val != 0.0 {
                for &(i, w) in taps {
                    out[i as usize] += w * val;
                }
            }
        }
    }

    pub fn apply_image(&self, src: &ImageGrid) -> Result<ImageGrid> {
        if src.dims() != self.src_dims {
            return Err(NucError::Dimensions(format!(
                "warp planned for {:?} applied to {:?}",
                self.src_dims,
                src.dims()
            )));
        }
        let mut out = vec![0.0; self.taps.len()];
        self.apply(src.values(), &mut out);
        ImageGrid::with_mask(out, self.valid.clone())
    }

    /// Adjoint image over a source whose validity is `src_valid`.
    pub fn adjoint_image(&self, v: &ImageGrid, src_valid: &Mask) -> Result<ImageGrid> {
        if v.dims() != self.dst_dims || src_valid.dims() != self.src_dims {
            return Err(NucError::Dimensions("adjoint dimension mismatch".into()));
        }
        let mut out = vec![0.0; self.src_dims.0 * self.src_dims.1];
        self.adjoint_add(v.values(), &mut out);
        ImageGrid::with_mask(out, src_valid.clone())
    }
}

/// Bilinear sample of `image` at `(x, y)` = (column, row). `None` when any
/// neighbor with nonzero weight is out of bounds or invalid.
pub fn sample_bilinear(image: &ImageGrid, x: f64, y: f64) -> Option<f64> {
    let (h, w) = image.dims();
    let (x0, fx) = axis_stencil(x, w)?;
    let (y0, fy) = axis_stencil(y, h)?;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let m = image.mask();
    if !(m.get(y0, x0) && m.get(y0, x1) && m.get(y1, x0) && m.get(y1, x1)) {
        return None;
    }
    Some(
        (1.0 - fx) * (1.0 - fy) * image.get(y0, x0)
            + fx * (1.0 - fy) * image.get(y0, x1)
            + (1.0 - fx) * fy * image.get(y1, x0)
            + fx * fy * image.get(y1, x1),
    )
}

/// Resamples `image` by `h` onto a grid of the same size.
pub fn warp(image: &ImageGrid, h: &Homography) -> Result<ImageGrid> {
    check_invertible(h)?;
    let plan = WarpPlan::new(h, image.mask(), image.dims());
    if plan.valid().count() == 0 {
        return Err(NucError::EmptyOverlap(
            "no output pixel has valid bilinear support".into(),
        ));
    }
    plan.apply_image(image)
}

/// Exact adjoint of [`warp`] for an all-valid source of the same size as `image`.
pub fn warp_adjoint(image: &ImageGrid, h: &Homography) -> Result<ImageGrid> {
    check_invertible(h)?;
    let (height, width) = image.dims();
    let src_valid = Mask::filled(height, width, true);
    let plan = WarpPlan::new(h, &src_valid, image.dims());
    let v = image.restricted(plan.valid())?;
    plan.adjoint_image(&v, &src_valid)
}

fn check_invertible(h: &Homography) -> Result<()> {
    let det = h.determinant();
    if !det.is_finite() || det.abs() <= crate::grid::homography::MIN_DETERMINANT {
        return Err(NucError::InvalidTransform(format!(
            "singular homography (det = {det:e})"
        )));
    }
    Ok(())
}
