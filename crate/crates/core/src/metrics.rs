//! Scores of restorations against ground truth.
//!
//! Scene estimates are only defined up to a global scale and shift, so the main
//! scene error is the RMSE after a least-squares affine alignment. Statistics are
//! taken over mutually valid pixels away from the image border.

use serde::{Deserialize, Serialize};

use crate::error::{NucError, Result};
use crate::grid::{ImageGrid, Mask};
use crate::scene_sim::scene::{CELSIUS_HIGH, CELSIUS_LOW, GRAY_LEVELS};

/// Border pixels excluded from every statistic by default.
pub const DEFAULT_MARGIN: usize = 2;

fn mutual(a: &ImageGrid, b: &ImageGrid, region: Option<&Mask>) -> Result<Vec<(f64, f64)>> {
    if a.dims() != b.dims() {
        return Err(NucError::Evaluation(format!(
            "images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut mask = a.mask().and(b.mask())?;
    if let Some(r) = region {
        mask = mask.and(r)?;
    }
    let pairs: Vec<(f64, f64)> = mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(p, _)| (a.values()[p], b.values()[p]))
        .collect();
    if pairs.is_empty() {
        return Err(NucError::Evaluation("no mutually valid pixels".into()));
    }
    Ok(pairs)
}

fn rmse_pairs(pairs: &[(f64, f64)]) -> f64 {
    (pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pairs.len() as f64).sqrt()
}

fn centered_moments(pairs: &[(f64, f64)]) -> (f64, f64, f64, f64, f64) {
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        vaa += (a - ma) * (a - ma);
        vbb += (b - mb) * (b - mb);
        vab += (a - ma) * (b - mb);
    }
    (ma, mb, vaa / n, vbb / n, vab / n)
}

fn pearson_pairs(pairs: &[(f64, f64)]) -> Result<f64> {
    let (_, _, vaa, vbb, vab) = centered_moments(pairs);
    if !(vaa > 0.0) || !(vbb > 0.0) {
        return Err(NucError::Evaluation("zero variance in Pearson correlation".into()));
    }
    Ok((vab / (vaa.sqrt() * vbb.sqrt())).clamp(-1.0, 1.0))
}

/// Root mean squared difference over mutually valid pixels.
pub fn rmse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    Ok(rmse_pairs(&mutual(a, b, None)?))
}

/// Pearson correlation over mutually valid pixels.
pub fn pearson(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    pearson_pairs(&mutual(a, b, None)?)
}

/// Converts a gray-value difference to degrees Celsius.
pub fn gv_to_celsius(delta: f64) -> f64 {
    delta * (CELSIUS_HIGH - CELSIUS_LOW) / GRAY_LEVELS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedComparison {
    /// Best `scale · estimate + shift` fit onto the truth.
    pub scale: f64,
    pub shift: f64,
    pub aligned_rmse: f64,
    pub raw_rmse: f64,
    pub pearson: f64,
    pub pixels: usize,
}

/// Least-squares affine alignment of `estimate` onto `truth`, then RMSE.
pub fn aligned_compare(truth: &ImageGrid, estimate: &ImageGrid) -> Result<AlignedComparison> {
    aligned_compare_in(truth, estimate, None)
}

/// [`aligned_compare`] restricted to `region`.
pub fn aligned_compare_in(truth: &ImageGrid, estimate: &ImageGrid, region: Option<&Mask>) -> Result<AlignedComparison> {
    let pairs = mutual(truth, estimate, region)?;
    let pearson = pearson_pairs(&pairs)?;
    let (mt, me, _, vee, vte) = centered_moments(&pairs);
    let scale = vte / vee;
    let shift = mt - scale * me;
    let aligned: Vec<(f64, f64)> = pairs.iter().map(|&(t, e)| (t, scale * e + shift)).collect();
    Ok(AlignedComparison {
        scale,
        shift,
        aligned_rmse: rmse_pairs(&aligned),
        raw_rmse: rmse_pairs(&pairs),
        pearson,
        pixels: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: usize,
    pub aligned_rmse: f64,
    pub raw_rmse: f64,
    pub pearson: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: Vec<GroupReport>,
    pub mean_rmse: f64,
    pub mean_raw_rmse: f64,
    pub mean_pearson: f64,
    pub mean_rmse_celsius: f64,
    /// Relative gain error in percent.
    pub gain_rmse_percent: f64,
    /// Offset error in gray values.
    pub offset_rmse: f64,
    pub evaluated_pixels: usize,
    pub margin: usize,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        line("groups", self.groups.len().to_string());
        line("margin", self.margin.to_string());
        line("evaluated_pixels", self.evaluated_pixels.to_string());
        line("mean_rmse_gv", format!("{:.9}", self.mean_rmse));
        line("mean_rmse_celsius", format!("{:.9}", self.mean_rmse_celsius));
        line("mean_raw_rmse_gv", format!("{:.9}", self.mean_raw_rmse));
        line("mean_pearson", format!("{:.12}", self.mean_pearson));
        line("gain_rmse_percent", format!("{:.9}", self.gain_rmse_percent));
        line("offset_rmse_gv", format!("{:.9}", self.offset_rmse));
        for g in &self.groups {
            let i = g.group;
            line(&format!("group{i:02}.rmse_gv"), format!("{:.9}", g.aligned_rmse));
            line(&format!("group{i:02}.raw_rmse_gv"), format!("{:.9}", g.raw_rmse));
            line(&format!("group{i:02}.pearson"), format!("{:.12}", g.pearson));
            line(&format!("group{i:02}.pixels"), g.pixels.to_string());
        }
        out
    }
}

/// Rescales a gain/offset pair to mean gain 1 and mean offset 0 over `region`,
/// the same convention the solver uses.
fn normalized_fields(gain: &ImageGrid, offset: &ImageGrid, region: &Mask) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx: Vec<usize> = (0..gain.len()).filter(|&p| region.as_slice()[p]).collect();
    if idx.is_empty() {
        return Err(NucError::Evaluation("empty gain/offset evaluation region".into()));
    }
    let n = idx.len() as f64;
    let a = idx.iter().map(|&p| gain.values()[p]).sum::<f64>() / n;
    let b = idx.iter().map(|&p| offset.values()[p]).sum::<f64>() / n;
    if !(a > 0.0) {
        return Err(NucError::Evaluation(format!("mean gain {a} is not positive")));
    }
    let g = gain.values().iter().map(|g| g / a).collect();
    let d = offset
        .values()
        .iter()
        .zip(gain.values())
        .map(|(d, g)| d - (b / a) * g)
        .collect();
    Ok((g, d))
}

/// Gain (relative, percent) and offset (gv) RMSE after both pairs are normalized
/// over `region`.
pub fn gain_offset_errors(
    true_gain: &ImageGrid,
    true_offset: &ImageGrid,
    gain: &ImageGrid,
    offset: &ImageGrid,
    region: &Mask,
) -> Result<(f64, f64)> {
    let (tg, td) = normalized_fields(true_gain, true_offset, region)?;
    let (eg, ed) = normalized_fields(gain, offset, region)?;
    let idx: Vec<usize> = (0..tg.len()).filter(|&p| region.as_slice()[p]).collect();
    let n = idx.len() as f64;
    let g_err = idx.iter().map(|&p| ((eg[p] - tg[p]) / tg[p]).powi(2)).sum::<f64>() / n;
    let d_err = idx.iter().map(|&p| (ed[p] - td[p]).powi(2)).sum::<f64>() / n;
    Ok((100.0 * g_err.sqrt(), d_err.sqrt()))
}

/// Full report for per-group scene estimates and an estimated gain/offset map.
///
/// `support` restricts the gain/offset comparison (for instance to pixels whose
/// regression was well posed).
pub fn evaluate(
    truths: &[ImageGrid],
    estimates: &[ImageGrid],
    true_fields: (&ImageGrid, &ImageGrid),
    estimated_fields: (&ImageGrid, &ImageGrid),
    support: Option<&Mask>,
    margin: usize,
) -> Result<EvalReport> {
    if truths.len() != estimates.len() || truths.is_empty() {
        return Err(NucError::Evaluation(format!(
            "{} truth images vs {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    let (h, w) = truths[0].dims();
    let interior = Mask::filled(h, w, true).without_border(margin);
    let mut groups = Vec::with_capacity(truths.len());
    for (i, (t, e)) in truths.iter().zip(estimates).enumerate() {
        let c = aligned_compare_in(t, e, Some(&interior))?;
        groups.push(GroupReport {
            group: i,
            aligned_rmse: c.aligned_rmse,
            raw_rmse: c.raw_rmse,
            pearson: c.pearson,
            pixels: c.pixels,
        });
    }
    let n = groups.len() as f64;
    let mean_rmse = groups.iter().map(|g| g.aligned_rmse).sum::<f64>() / n;
    let region = match support {
        Some(s) => interior.and(s)?,
        None => interior.clone(),
    };
    if true_fields.0.dims() != (h, w) || estimated_fields.0.dims() != (h, w) {
        return Err(NucError::Evaluation("gain/offset fields differ in size".into()));
    }
    let (gain_rmse_percent, offset_rmse) = gain_offset_errors(
        true_fields.0,
        true_fields.1,
        estimated_fields.0,
        estimated_fields.1,
        &region,
    )?;
    Ok(EvalReport {
        mean_rmse,
        mean_raw_rmse: groups.iter().map(|g| g.raw_rmse).sum::<f64>() / n,
        mean_pearson: groups.iter().map(|g| g.pearson).sum::<f64>() / n,
        mean_rmse_celsius: gv_to_celsius(mean_rmse),
        gain_rmse_percent,
        offset_rmse,
        evaluated_pixels: groups.iter().map(|g| g.pixels).sum(),
        margin,
        groups,
    })
}
