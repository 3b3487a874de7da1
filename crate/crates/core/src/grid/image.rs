use crate::error::{NucError, Result};

/// Smallest side length accepted for an [`ImageGrid`]; central differences need interior pixels.
pub const MIN_SIDE: usize = 3;

/// Per-pixel boolean field, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(NucError::Dimensions(format!(
                "mask of {height}x{width} needs {} entries, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Mask { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        check_same_dims(self.dims(), other.dims())?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Ok(Mask {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    /// Clears every pixel closer than `margin` to the image border.
    pub fn without_border(&self, margin: usize) -> Mask {
        let mut out = self.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                if row < margin || col < margin || row + margin >= self.height || col + margin >= self.width {
                    out.set(row, col, false);
                }
            }
        }
        out
    }
}

/// Per-pixel pair count `n_p`: the number of masks in a stack that cover each pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    height: usize,
    width: usize,
    counts: Vec<u32>,
}

impl Coverage {
    pub fn from_masks<'a, I>(height: usize, width: usize, masks: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Mask>,
    {
        let mut counts = vec![0u32; height * width];
        for mask in masks {
            check_same_dims((height, width), mask.dims())?;
            for (c, &b) in counts.iter_mut().zip(mask.as_slice()) {
                *c += b as u32;
            }
        }
        Ok(Coverage { height, width, counts })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    /// Pixels covered at least `min_count` times.
    pub fn at_least(&self, min_count: u32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.counts.iter().map(|&c| c >= min_count).collect(),
        }
    }
}

/// A `height x width` field of gray values with a validity mask.
///
/// Pixel centers sit at integer coordinates with the origin at the top-left corner;
/// `s` is the column and `t` the row. Invalid pixels always store `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Mask,
}

impl ImageGrid {
    /// All-valid image filled with `value`.
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_vec(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    /// All-valid image from row-major values.
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let valid = Mask::filled(height, width, true);
        Self::with_mask(values, valid)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self::from_vec(height, width, values)
    }

    /// Image from values and an explicit mask. Values at invalid pixels are zeroed.
    pub fn with_mask(mut values: Vec<f64>, valid: Mask) -> Result<Self> {
        let (height, width) = valid.dims();
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(NucError::Dimensions(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(NucError::Dimensions(format!(
                "image of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        for (i, (v, &ok)) in values.iter_mut().zip(valid.as_slice()).enumerate() {
            if ok {
                if !v.is_finite() {
                    return Err(NucError::NonFinite {
                        row: i / width,
                        col: i % width,
                    });
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(ImageGrid {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid.get(row, col)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    pub fn into_parts(self) -> (Vec<f64>, Mask) {
        (self.values, self.valid)
    }

    /// Same image with its mask intersected with `mask`.
    pub fn restricted(&self, mask: &Mask) -> Result<ImageGrid> {
        let valid = self.valid.and(mask)?;
        ImageGrid::with_mask(self.values.clone(), valid)
    }

    /// Pixel-wise map over valid pixels; invalid pixels stay invalid.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<ImageGrid> {
        let values = self
            .values
            .iter()
            .zip(self.valid.as_slice())
            .map(|(&v, &ok)| if ok { f(v) } else { 0.0 })
            .collect();
        ImageGrid::with_mask(values, self.valid.clone())
    }

    /// Pixel-wise combination; the result is valid where both inputs are.
    pub fn zip_map(&self, other: &ImageGrid, mut f: impl FnMut(f64, f64) -> f64) -> Result<ImageGrid> {
        check_same_dims(self.dims(), other.dims())?;
        let valid = self.valid.and(&other.valid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .zip(valid.as_slice())
            .map(|((&a, &b), &ok)| if ok { f(a, b) } else { 0.0 })
            .collect();
        ImageGrid::with_mask(values, valid)
    }

    /// Mean over valid pixels, `None` when nothing is valid.
    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self.valid_values().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Population standard deviation over valid pixels.
    pub fn std(&self) -> Option<f64> {
        let mean = self.mean()?;
        let n = self.valid_count() as f64;
        let ss: f64 = self.valid_values().map(|v| (v - mean) * (v - mean)).sum();
        Some((ss / n).sqrt())
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.valid.as_slice())
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    /// Sub-image with the top-left corner at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImageGrid> {
        if row + height > self.height || col + width > self.width {
            return Err(NucError::Dimensions(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width);
        let mut bits = Vec::with_capacity(height * width);
        for r in row..row + height {
            for c in col..col + width {
                values.push(self.get(r, c));
                bits.push(self.is_valid(r, c));
            }
        }
        ImageGrid::with_mask(values, Mask::from_vec(height, width, bits)?)
    }
}

pub(crate) fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(NucError::Dimensions(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}
