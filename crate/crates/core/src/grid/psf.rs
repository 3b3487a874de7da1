use crate::error::{NucError, Result};
use crate::grid::image::{ImageGrid, Mask};

/// Square, odd-sized, unit-sum blur kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    size: usize,
    weights: Vec<f64>,
}

impl Psf {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(NucError::Config(format!("PSF size {size} must be odd")));
        }
        if weights.len() != size * size {
            return Err(NucError::Config(format!(
                "PSF of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite()) || (sum - 1.0).abs() > 1e-12 {
            return Err(NucError::Config(format!(
                "PSF weights must be finite and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Psf { size, weights })
    }

    /// The identity kernel.
    pub fn delta() -> Self {
        Psf {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Normalized Gaussian of standard deviation `sigma` pixels, truncated at `size`.
    pub fn gaussian(sigma: f64, size: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(NucError::Config(format!("Gaussian sigma {sigma} must be positive")));
        }
        if size.is_multiple_of(2) {
            return Err(NucError::Config(format!("PSF size {size} must be odd")));
        }
        let c = (size / 2) as f64;
        let mut weights: Vec<f64> = (0..size * size)
            .map(|i| {
                let (r, col) = ((i / size) as f64 - c, (i % size) as f64 - c);
                (-(r * r + col * col) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Psf { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_delta(&self) -> bool {
        self.size == 1
    }

    #[inline]
    fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    /// Output validity for a convolution over input validity `src`.
    pub fn output_mask(&self, src: &Mask) -> Mask {
        let (h, w) = src.dims();
        let r = self.radius();
        let mut out = Mask::filled(h, w, false);
        for row in r..h.saturating_sub(r) {
            for col in r..w.saturating_sub(r) {
                let ok = (row - r..=row + r).all(|rr| (col - r..=col + r).all(|cc| src.get(rr, cc)));
                out.set(row, col, ok);
            }
        }
        out
    }

    /// `out = A src` at the pixels of `out_mask`, zero elsewhere.
    pub fn apply(&self, src: &[f64], dims: (usize, usize), out_mask: &Mask, out: &mut [f64]) {
        let (_, w) = dims;
        let r = self.radius();
        for (p, o) in out.iter_mut().enumerate() {
            if !out_mask.as_slice()[p] {
                *o = 0.0;
                continue;
            }
            let (row, col) = (p / w, p % w);
            let mut acc = 0.0;
            for i in 0..self.size {
                for j in 0..self.size {
                    // true convolution: kernel is flipped relative to the image
                    let rr = row + r - i;
                    let cc = col + r - j;
                    acc += self.weight(i, j) * src[rr * w + cc];
                }
            }
            *o = acc;
        }
    }

    /// `out += Aᵀ v`, reading `v` at the pixels of `out_mask`.
    pub fn adjoint_add(&self, v: &[f64], dims: (usize, usize), out_mask: &Mask, out: &mut [f64]) {
        let (_, w) = dims;
        let r = self.radius();
        for (p, &val) in v.iter().enumerate() {
            if !out_mask.as_slice()[p] || val == 0.0 {
                continue;
            }
            let (row, col) = (p / w, p % w);
            for i in 0..self.size {
                for j in 0..self.size {
                    let rr = row + r - i;
                    let cc = col + r - j;
                    out[rr * w + cc] += self.weight(i, j) * val;
                }
            }
        }
    }
}

impl Default for Psf {
    fn default() -> Self {
        Psf::delta()
    }
}

/// Valid-region convolution; pixels whose stencil touches an invalid or
/// out-of-bounds pixel are invalid in the output.
pub fn convolve(image: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    let (h, w) = image.dims();
    if psf.size() > h || psf.size() > w {
        return Err(NucError::Config(format!(
            "PSF of size {} exceeds {h}x{w} image",
            psf.size()
        )));
    }
    let mask = psf.output_mask(image.mask());
    let mut out = vec![0.0; h * w];
    psf.apply(image.values(), (h, w), &mask, &mut out);
    ImageGrid::with_mask(out, mask)
}

/// Exact adjoint of [`convolve`] for an all-valid source of the same size.
pub fn convolve_adjoint(image: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    let (h, w) = image.dims();
    if psf.size() > h || psf.size() > w {
        return Err(NucError::Config(format!(
            "PSF of size {} exceeds {h}x{w} image",
            psf.size()
        )));
    }
    let full = Mask::filled(h, w, true);
    let mask = psf.output_mask(&full).and(image.mask())?;
    let mut out = vec![0.0; h * w];
    psf.adjoint_add(image.values(), (h, w), &mask, &mut out);
    ImageGrid::with_mask(out, full)
}
