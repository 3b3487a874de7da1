//! Python bindings: simulate a dataset, restore it and score the result.
//!
//! Images cross the boundary as lists of rows. Invalid pixels are `nan` on the
//! way out, and `nan` inputs mark pixels invalid on the way in.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nuc_core::metrics;
use nuc_core::scene_sim::{simulate as simulate_dataset, ObservationSet, ProfileKind, SimulationConfig};
use nuc_core::solver::{initial_nuc, solve, GainOffsetMap, SolverConfig};
use nuc_core::{ImageGrid, Mask, NucError};

type Rows = Vec<Vec<f64>>;

fn py_err(e: NucError) -> PyErr {
    match e {
        NucError::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(img: &ImageGrid) -> Rows {
    let (h, w) = img.dims();
    (0..h)
        .map(|r| {
            (0..w)
                .map(|c| if img.is_valid(r, c) { img.get(r, c) } else { f64::NAN })
                .collect()
        })
        .collect()
}

fn from_rows(rows: Rows) -> PyResult<ImageGrid> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let valid = Mask::from_vec(h, w, values.iter().map(|v| !v.is_nan()).collect()).map_err(py_err)?;
    ImageGrid::with_mask(values, valid).map_err(py_err)
}

fn profile_kind(name: &str) -> PyResult<ProfileKind> {
    match name {
        "radial" => Ok(ProfileKind::Radial),
        "sine" => Ok(ProfileKind::Sine),
        other => Err(PyValueError::new_err(format!(
            "unknown profile '{other}' (radial or sine)"
        ))),
    }
}

/// Synthetic dataset with ground truth and a perturbed calibration map.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (fovs=8, k=8, size=66, profile="radial", snr=1000.0, seed=0, init_nuc_error=0.05))]
fn simulate<'py>(
    py: Python<'py>,
    fovs: usize,
    k: usize,
    size: usize,
    profile: &str,
    snr: f64,
    seed: u64,
    init_nuc_error: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SimulationConfig {
        fovs,
        k,
        size,
        profile: profile_kind(profile)?,
        snr,
        seed,
        ..Default::default()
    };
    let ds = simulate_dataset(&cfg).map_err(py_err)?;
    let calib = initial_nuc(&ds.truth.profile, init_nuc_error, seed).map_err(py_err)?;
    let out = PyDict::new(py);
    let groups: Vec<Vec<Rows>> = ds
        .observations
        .groups
        .iter()
        .map(|g| g.iter().map(to_rows).collect())
        .collect();
    out.set_item("observations", groups)?;
    out.set_item("pivots", ds.truth.pivots.iter().map(to_rows).collect::<Vec<_>>())?;
    out.set_item("gain", to_rows(&ds.truth.profile.gain))?;
    out.set_item("offset", to_rows(&ds.truth.profile.offset))?;
    out.set_item("calib_gain", to_rows(&calib.gain))?;
    out.set_item("calib_offset", to_rows(&calib.offset))?;
    Ok(out)
}

/// Jointly estimates scenes, gain and offset from grouped observations.
/// Without a calibration map the solver starts from pixel statistics.
#[pyfunction]
#[pyo3(signature = (observations, calib_gain=None, calib_offset=None, cycles=10, lsqr_iters=20, joint_iters=300))]
fn restore<'py>(
    py: Python<'py>,
    observations: Vec<Vec<Rows>>,
    calib_gain: Option<Rows>,
    calib_offset: Option<Rows>,
    cycles: usize,
    lsqr_iters: usize,
    joint_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let groups = observations
        .into_iter()
        .map(|g| g.into_iter().map(from_rows).collect::<PyResult<Vec<_>>>())
        .collect::<PyResult<Vec<_>>>()?;
    let obs = ObservationSet::new(groups).map_err(py_err)?;
    let initial = match (calib_gain, calib_offset) {
        (Some(g), Some(d)) => {
            let (g, d) = (from_rows(g)?, from_rows(d)?);
            let (h, w) = g.dims();
            Some(GainOffsetMap::new(g, d, Mask::filled(h, w, true)).map_err(py_err)?)
        }
        (None, None) => None,
        _ => {
            return Err(PyValueError::new_err(
                "pass both calib_gain and calib_offset or neither",
            ))
        }
    };
    let cfg = SolverConfig {
        outer_iterations: cycles,
        lsqr_iterations: lsqr_iters,
        joint_iterations: joint_iters,
        ..Default::default()
    };
    let state = py.detach(|| solve(&obs, initial.as_ref(), &cfg)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("scenes", state.x.iter().map(to_rows).collect::<Vec<_>>())?;
    out.set_item("gain", to_rows(&state.map.gain))?;
    out.set_item("offset", to_rows(&state.map.offset))?;
    let (h, w) = state.map.support.dims();
    let support: Vec<Vec<bool>> = state
        .map
        .support
        .as_slice()
        .chunks(w)
        .take(h)
        .map(<[bool]>::to_vec)
        .collect();
    out.set_item("support", support)?;
    out.set_item("objective_history", state.objective_history.clone())?;
    out.set_item("cycles", state.cycle)?;
    Ok(out)
}

/// Fits `scale·estimate + shift` onto the truth and reports the errors.
#[pyfunction]
fn aligned_compare<'py>(py: Python<'py>, truth: Rows, estimate: Rows) -> PyResult<Bound<'py, PyDict>> {
    let c = metrics::aligned_compare(&from_rows(truth)?, &from_rows(estimate)?).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("scale", c.scale)?;
    out.set_item("shift", c.shift)?;
    out.set_item("aligned_rmse", c.aligned_rmse)?;
    out.set_item("raw_rmse", c.raw_rmse)?;
    out.set_item("pearson", c.pearson)?;
    out.set_item("pixels", c.pixels)?;
    Ok(out)
}

/// Gray-value difference in degrees Celsius.
#[pyfunction]
fn gv_to_celsius(delta: f64) -> f64 {
    metrics::gv_to_celsius(delta)
}

#[pymodule]
fn nuc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(aligned_compare, m)?)?;
    m.add_function(wrap_pyfunction!(gv_to_celsius, m)?)?;
    Ok(())
}
