//! Directory layout of datasets and results.
//!
//! ```text
//! <dataset>/truth/   x_gGG.nucf, gain.txt, offset.txt, H_gGG_oOO.txt
//! <dataset>/obs/     y_gGG_oOO.nucf, calib_gain.txt, calib_offset.txt (optional)
//! <dataset>/masks/   W_gGG_oOO.nucf
//! <results>/         x_gGG.nucf, gain.txt, offset.txt, support.nucf,
//!                    H_gGG_oOO.txt, objective.txt
//! ```
//!
//! Restoration only ever reads `obs/`.

use std::fs;
use std::path::{Path, PathBuf};

use nuc_core::io::{read_field, read_mask, read_nucf, write_field, write_homography, write_mask, write_nucf};
use nuc_core::scene_sim::{Dataset, ObservationSet};
use nuc_core::solver::{GainOffsetMap, SolverState};
use nuc_core::{ImageGrid, Mask};

use crate::error::{CliError, CliResult};

pub const TRUTH_DIR: &str = "truth";
pub const OBS_DIR: &str = "obs";
pub const MASKS_DIR: &str = "masks";
pub const RESULTS_DIR: &str = "results";

pub fn scene_name(group: usize) -> String {
    format!("x_g{group:02}.nucf")
}

pub fn observation_name(group: usize, frame: usize) -> String {
    format!("y_g{group:02}_o{frame:02}.nucf")
}

pub fn homography_name(group: usize, frame: usize) -> String {
    format!("H_g{group:02}_o{frame:02}.txt")
}

pub fn mask_name(group: usize, frame: usize) -> String {
    format!("W_g{group:02}_o{frame:02}.nucf")
}

pub fn diff_name(group: usize) -> String {
    format!("diff_g{group:02}.pgm")
}

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Tracks files written under a root so the manifest can checksum them.
#[derive(Debug, Default)]
pub struct Written {
    pub root: PathBuf,
    pub files: Vec<String>,
}

impl Written {
    pub fn new(root: &Path) -> Self {
        Written {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn path(&mut self, rel: String) -> PathBuf {
        let p = self.root.join(&rel);
        self.files.push(rel);
        p
    }

    pub fn image(&mut self, rel: String, img: &ImageGrid) -> CliResult<()> {
        let p = self.path(rel);
        Ok(write_nucf(&p, img)?)
    }

    pub fn mask(&mut self, rel: String, mask: &Mask) -> CliResult<()> {
        let p = self.path(rel);
        Ok(write_mask(&p, mask)?)
    }

    pub fn field(&mut self, rel: String, img: &ImageGrid) -> CliResult<()> {
        let p = self.path(rel);
        Ok(write_field(&p, img)?)
    }

    pub fn homography(&mut self, rel: String, h: &nuc_core::Homography) -> CliResult<()> {
        let p = self.path(rel);
        Ok(write_homography(&p, h)?)
    }

    pub fn bytes(&mut self, rel: String, data: &[u8]) -> CliResult<()> {
        let p = self.path(rel);
        fs::write(&p, data).map_err(|e| CliError::io(p, e))
    }
}

fn rel(dir: &str, name: String) -> String {
    format!("{dir}/{name}")
}

/// Writes the full dataset (truth, observations, masks) and an optional
/// calibration map under `root`.
pub fn write_dataset(root: &Path, ds: &Dataset, calib: Option<&GainOffsetMap>) -> CliResult<Written> {
    for d in [TRUTH_DIR, OBS_DIR, MASKS_DIR] {
        ensure_dir(&root.join(d))?;
    }
    let mut w = Written::new(root);
    let truth = &ds.truth;
    for (i, x) in truth.pivots.iter().enumerate() {
        w.image(rel(TRUTH_DIR, scene_name(i)), x)?;
    }
    w.field(rel(TRUTH_DIR, "gain.txt".into()), &truth.profile.gain)?;
    w.field(rel(TRUTH_DIR, "offset.txt".into()), &truth.profile.offset)?;
    for (i, group) in ds.observations.groups.iter().enumerate() {
        for (j, y) in group.iter().enumerate() {
            w.image(rel(OBS_DIR, observation_name(i, j)), y)?;
            w.homography(rel(TRUTH_DIR, homography_name(i, j)), &truth.homographies[i][j])?;
            w.mask(rel(MASKS_DIR, mask_name(i, j)), &truth.masks[i][j])?;
        }
    }
    if let Some(c) = calib {
        w.field(rel(OBS_DIR, "calib_gain.txt".into()), &c.gain)?;
        w.field(rel(OBS_DIR, "calib_offset.txt".into()), &c.offset)?;
    }
    Ok(w)
}

/// Parses `<prefix>gGG[_oOO].<ext>` names.
fn parse_indices(name: &str, prefix: &str, ext: &str, frames: bool) -> Option<(usize, usize)> {
    let stem = name.strip_prefix(prefix)?.strip_suffix(ext)?;
    let stem = stem.strip_prefix('g')?;
    if frames {
        let (g, o) = stem.split_once("_o")?;
        Some((g.parse().ok()?, o.parse().ok()?))
    } else {
        Some((stem.parse().ok()?, 0))
    }
}

fn list_dir(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|err| CliError::io(dir, err))?;
        names.push(e.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}

/// Indices found in `dir`, checked to form a dense `groups x frames` block.
fn indexed_files(dir: &Path, prefix: &str, ext: &str, frames: bool) -> CliResult<Vec<Vec<PathBuf>>> {
    let mut found: Vec<(usize, usize, PathBuf)> = list_dir(dir)?
        .into_iter()
        .filter_map(|n| parse_indices(&n, prefix, ext, frames).map(|(g, o)| (g, o, dir.join(n))))
        .collect();
    found.sort();
    let mut groups: Vec<Vec<PathBuf>> = Vec::new();
    for (g, o, p) in found {
        if g == groups.len() {
            groups.push(Vec::new());
        }
        if g + 1 != groups.len() || o != groups[g].len() {
            return Err(CliError::input(p, "file indices are not contiguous from 0"));
        }
        groups[g].push(p);
    }
    if groups.is_empty() {
        return Err(CliError::input(dir, format!("no {prefix}*{ext} files found")));
    }
    Ok(groups)
}

pub fn read_observations(root: &Path) -> CliResult<ObservationSet> {
    let dir = root.join(OBS_DIR);
    let files = indexed_files(&dir, "y_", ".nucf", true)?;
    let groups = files
        .iter()
        .map(|g| g.iter().map(|p| read_nucf(p).map_err(CliError::from)).collect())
        .collect::<CliResult<Vec<Vec<ImageGrid>>>>()?;
    Ok(ObservationSet::new(groups)?)
}

/// Calibration map from `obs/`, if both files are present.
pub fn read_calibration(root: &Path) -> CliResult<Option<GainOffsetMap>> {
    let dir = root.join(OBS_DIR);
    let (g, d) = (dir.join("calib_gain.txt"), dir.join("calib_offset.txt"));
    if !g.exists() || !d.exists() {
        return Ok(None);
    }
    let gain = read_field(&g)?;
    let offset = read_field(&d)?;
    let (h, w) = gain.dims();
    Ok(Some(GainOffsetMap::new(gain, offset, Mask::filled(h, w, true))?))
}

pub struct TruthFiles {
    pub pivots: Vec<ImageGrid>,
    pub gain: ImageGrid,
    pub offset: ImageGrid,
}

/// Accepts either a dataset root or its `truth/` directory.
pub fn read_truth(path: &Path) -> CliResult<TruthFiles> {
    let dir = if path.join(TRUTH_DIR).is_dir() {
        path.join(TRUTH_DIR)
    } else {
        path.to_path_buf()
    };
    let pivots = indexed_files(&dir, "x_", ".nucf", false)?
        .iter()
        .map(|g| read_nucf(&g[0]).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(TruthFiles {
        pivots,
        gain: read_field(&dir.join("gain.txt"))?,
        offset: read_field(&dir.join("offset.txt"))?,
    })
}

pub fn write_results(dir: &Path, state: &SolverState) -> CliResult<Written> {
    ensure_dir(dir)?;
    let mut w = Written::new(dir);
    for (i, x) in state.x.iter().enumerate() {
        w.image(scene_name(i), x)?;
    }
    w.field("gain.txt".into(), &state.map.gain)?;
    w.field("offset.txt".into(), &state.map.offset)?;
    w.mask("support.nucf".into(), &state.map.support)?;
    for (i, hs) in state.homographies.iter().enumerate() {
        for (j, h) in hs.iter().enumerate() {
            w.homography(homography_name(i, j), h)?;
        }
    }
    let mut history = String::from("# cycle stage objective\n");
    for r in &state.stages {
        history.push_str(&format!("{} {} {:.16e}\n", r.cycle, r.stage.as_str(), r.objective));
    }
    w.bytes("objective.txt".into(), history.as_bytes())?;
    let mut failures = String::new();
    for f in &state.failures {
        failures.push_str(&format!("g{:02} o{:02} {}\n", f.group, f.frame, f.error));
    }
    w.bytes("registration_failures.txt".into(), failures.as_bytes())?;
    Ok(w)
}

pub struct ResultFiles {
    pub x: Vec<ImageGrid>,
    pub gain: ImageGrid,
    pub offset: ImageGrid,
    pub support: Mask,
}

pub fn read_results(dir: &Path) -> CliResult<ResultFiles> {
    let x = indexed_files(dir, "x_", ".nucf", false)?
        .iter()
        .map(|g| read_nucf(&g[0]).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ResultFiles {
        x,
        gain: read_field(&dir.join("gain.txt"))?,
        offset: read_field(&dir.join("offset.txt"))?,
        support: read_mask(&dir.join("support.nucf"))?,
    })
}
