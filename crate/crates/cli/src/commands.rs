//! The `simulate`, `restore`, `evaluate`, `sweep-k` and `replay` commands.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use nuc_core::io::{difference_pgm, read_scene};
use nuc_core::metrics::{evaluate, EvalReport, DEFAULT_MARGIN};
use nuc_core::scene_sim::{build_dataset, simulate, Dataset, ProfileKind, SimulationConfig};
use nuc_core::solver::{initial_nuc, solve_with_observer, GainOffsetMap, SolverConfig, SolverState};
use nuc_core::Mask;

use crate::error::{CliError, CliResult};
use crate::layout::{self, Written};
use crate::manifest::{file_sha256, RunManifest, MANIFEST_NAME};

/// Seed stream for the simulated laboratory calibration.
const CALIB_STREAM: u64 = 0x0827_2D4A_E5B1_93C6;

/// One JSON object per line on stderr.
pub fn progress<T: Serialize>(event: &str, payload: &T) {
    let body = serde_json::to_value(payload).unwrap_or(serde_json::Value::Null);
    let line = serde_json::json!({ "event": event, "data": body });
    eprintln!("{line}");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Radial,
    Sine,
}

impl From<ProfileArg> for ProfileKind {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Radial => ProfileKind::Radial,
            ProfileArg::Sine => ProfileKind::Sine,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "radial")]
    pub profile: ProfileArg,
    /// Number of disjoint fields of view (groups).
    #[arg(long, default_value_t = 8)]
    pub fovs: usize,
    /// Frames per field of view.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Sensor height and width in pixels.
    #[arg(long, default_value_t = 66)]
    pub size: usize,
    #[arg(long, default_value_t = nuc_core::scene_sim::DEFAULT_SNR)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth mosaic (NUCF or 8-bit PGM) instead of the procedural one.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Relative error of the simulated laboratory calibration stored in obs/.
    #[arg(long, default_value_t = 0.05)]
    pub init_nuc_error: f64,
    /// Do not write a calibration map; restore then starts from pixel statistics.
    #[arg(long)]
    pub no_calibration: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn config(&self) -> SimulationConfig {
        SimulationConfig {
            fovs: self.fovs,
            k: self.k,
            size: self.size,
            profile: self.profile.into(),
            snr: self.snr,
            seed: self.seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.fovs == 0 || self.k == 0 || self.size < 3 {
            return Err(CliError::Usage("--fovs and --k must be >= 1 and --size >= 3".into()));
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            return Err(CliError::Usage(format!("--snr {} must be positive", self.snr)));
        }
        if !self.init_nuc_error.is_finite() || self.init_nuc_error < 0.0 {
            return Err(CliError::Usage(format!(
                "--init-nuc-error {} must be a finite nonnegative number",
                self.init_nuc_error
            )));
        }
        Ok(())
    }
}

/// The dataset plus the calibration map that `simulate` would store.
pub fn simulated_dataset(args: &SimulateArgs) -> CliResult<(Dataset, Option<GainOffsetMap>)> {
    args.validate()?;
    let cfg = args.config();
    let ds = match &args.scene {
        Some(p) => build_dataset(&read_scene(p)?, &cfg)?,
        None => simulate(&cfg)?,
    };
    let calib = if args.no_calibration {
        None
    } else {
        Some(initial_nuc(
            &ds.truth.profile,
            args.init_nuc_error,
            args.seed ^ CALIB_STREAM,
        )?)
    };
    Ok((ds, calib))
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<RunManifest> {
    let (ds, calib) = simulated_dataset(args)?;
    let written = layout::write_dataset(&args.out, &ds, calib.as_ref())?;
    let cfg = args.config();
    let mut m = RunManifest::new("simulate");
    m.set("profile", cfg.profile.as_str());
    m.set("fovs", cfg.fovs);
    m.set("k", cfg.k);
    m.set("size", cfg.size);
    m.set("snr", cfg.snr);
    m.set("seed", cfg.seed);
    match &args.scene {
        Some(p) => {
            m.set("scene", p.display());
            m.set("scene_sha256", file_sha256(p)?);
        }
        None => m.set("scene", "procedural"),
    }
    m.set("init_nuc_error", args.init_nuc_error);
    m.set("calibration", !args.no_calibration);
    let h = cfg.hover;
    m.set("hover.t_z_range", h.t_z_range);
    m.set("hover.yaw_range_deg", h.yaw_range_deg);
    m.set("hover.tilt_range_deg", h.tilt_range_deg);
    m.set("hover.max_translation", h.max_translation);
    m.set("hover.altitude", h.altitude);
    m.set("hover.fov_deg", h.fov_deg);
    m.set("psf", "delta");
    m.set("observations", ds.observations.total());
    m.add_checksums(&written)?;
    m.write(&args.out)?;
    progress(
        "simulate_done",
        &serde_json::json!({ "groups": cfg.fovs, "frames": ds.observations.total() }),
    );
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Calibration map if obs/ has one, otherwise pixel statistics.
    Auto,
    Calib,
    Stats,
}

impl InitArg {
    fn as_str(&self) -> &'static str {
        match self {
            InitArg::Auto => "auto",
            InitArg::Calib => "calib",
            InitArg::Stats => "stats",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    /// Dataset directory; only its obs/ subdirectory is read.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Results directory (default: <in>/results).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub cycles: usize,
    #[arg(long, default_value_t = 20)]
    pub lsqr_iters: usize,
    /// Iterations of the joint refinement solve per cycle (0 disables it).
    #[arg(long, default_value_t = 300)]
    pub joint_iters: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub init: InitArg,
    /// Record per-stage wall-clock times in the manifest (breaks byte-identity).
    #[arg(long)]
    pub timings: bool,
}

impl RestoreArgs {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.input.join(layout::RESULTS_DIR))
    }

    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            outer_iterations: self.cycles,
            lsqr_iterations: self.lsqr_iters,
            joint_iterations: self.joint_iters,
            ..Default::default()
        }
    }
}

/// Solves a dataset directory without writing anything.
pub fn restore_state(args: &RestoreArgs) -> CliResult<SolverState> {
    if args.cycles == 0 || args.lsqr_iters == 0 {
        return Err(CliError::Usage("--cycles and --lsqr-iters must be >= 1".into()));
    }
    let obs = layout::read_observations(&args.input)?;
    let calib =
        match args.init {
            InitArg::Stats => None,
            InitArg::Auto => layout::read_calibration(&args.input)?,
            InitArg::Calib => Some(layout::read_calibration(&args.input)?.ok_or_else(|| {
                CliError::input(args.input.join(layout::OBS_DIR), "no calib_gain.txt/calib_offset.txt")
            })?),
        };
    let cfg = args.config();
    Ok(solve_with_observer(&obs, calib.as_ref(), &cfg, |r| {
        progress("stage", r)
    })?)
}

pub fn cmd_restore(args: &RestoreArgs) -> CliResult<RunManifest> {
    let state = restore_state(args)?;
    let out = args.out_dir();
    let written = layout::write_results(&out, &state)?;
    let cfg = args.config();
    let mut m = RunManifest::new("restore");
    m.set("input", args.input.display());
    m.set("init", args.init.as_str());
    m.set("cycles", cfg.outer_iterations);
    m.set("lsqr_iters", cfg.lsqr_iterations);
    m.set("joint_iters", cfg.joint_iterations);
    m.set("min_pixel_pairs", cfg.min_pixel_pairs);
    m.set("variance_floor", format!("{:.16e}", state.variance_floor));
    m.set("normalize_each_cycle", cfg.normalize_each_cycle);
    m.set("template_radius", cfg.template_radius);
    m.set("relative_tolerance", cfg.relative_tolerance);
    m.set("registration.max_gn_iterations", cfg.registration.max_gn_iterations);
    m.set("registration.boundary_margin", cfg.registration.boundary_margin);
    m.set("registration.damping", cfg.registration.damping);
    m.set("registration.step_tolerance", cfg.registration.step_tolerance);
    m.set("psf", "delta");
    m.set("cycles_run", state.cycle);
    m.set(
        "final_objective",
        format!("{:.16e}", state.objective_history.last().copied().unwrap_or(f64::NAN)),
    );
    m.set("registration_failures", state.failures.len());
    if args.timings {
        for (n, r) in state.stages.iter().enumerate() {
            m.set(
                &format!("timing.{n:03}.{}.{}", r.cycle, r.stage.as_str()),
                format!("{:.3}", r.elapsed_seconds),
            );
        }
    }
    m.add_checksums(&written)?;
    m.write(&out)?;
    Ok(m)
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Dataset root or its truth/ directory.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    /// Report directory (default: <results>/evaluation).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Border pixels excluded from every statistic.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: usize,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<EvalReport> {
    let truth = layout::read_truth(&args.truth)?;
    let res = layout::read_results(&args.results)?;
    let report = evaluate(
        &truth.pivots,
        &res.x,
        (&truth.gain, &truth.offset),
        (&res.gain, &res.offset),
        Some(&res.support),
        args.margin,
    )?;
    let out = args.out.clone().unwrap_or_else(|| args.results.join("evaluation"));
    layout::ensure_dir(&out)?;
    let mut w = Written::new(&out);
    w.bytes("report.txt".into(), report.to_text().as_bytes())?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Usage(format!("cannot serialize report: {e}")))?;
    w.bytes("report.json".into(), json.as_bytes())?;
    for (i, (t, e)) in truth.pivots.iter().zip(&res.x).enumerate() {
        let c = nuc_core::metrics::aligned_compare_in(t, e, None)?;
        let aligned = e.map(|v| c.scale * v + c.shift)?;
        let (h, wd) = t.dims();
        let valid = t
            .mask()
            .and(e.mask())?
            .and(&Mask::filled(h, wd, true).without_border(args.margin))?;
        w.bytes(layout::diff_name(i), &difference_pgm(t, &aligned, &valid)?)?;
    }
    let mut m = RunManifest::new("evaluate");
    m.set("truth", args.truth.display());
    m.set("results", args.results.display());
    m.set("margin", args.margin);
    m.add_checksums(&w)?;
    m.write(&out)?;
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated frame counts per field of view.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    pub k_list: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "radial")]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 8)]
    pub fovs: usize,
    #[arg(long, default_value_t = 66)]
    pub size: usize,
    #[arg(long, default_value_t = nuc_core::scene_sim::DEFAULT_SNR)]
    pub snr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub init_nuc_error: f64,
    #[arg(long, default_value_t = 10)]
    pub cycles: usize,
    #[arg(long, default_value_t = 20)]
    pub lsqr_iters: usize,
    #[arg(long, default_value_t = 300)]
    pub joint_iters: usize,
    /// Also write the table and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Statistics of one k over all repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub repeats: usize,
    pub mean_pearson: f64,
    pub mean_rmse: f64,
    pub pearson_std: f64,
    pub rmse_std: f64,
    /// Runs whose objective rose across a gain/offset or scene stage.
    pub descent_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut out = String::from("k\trepeats\tmean_pc\tmean_rmse_gv\tstd_pc\tstd_rmse_gv\tdescent_violations\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.10}\t{:.6}\t{:.3e}\t{:.3e}\t{}\n",
                r.k, r.repeats, r.mean_pearson, r.mean_rmse, r.pearson_std, r.rmse_std, r.descent_violations
            ));
        }
        out
    }
}

/// Seed of repeat `r`; shared by every k so the k values see the same scenes.
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add((repeat as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Report of one run and whether its objective ever rose across a block stage.
fn sweep_one(args: &SweepArgs, k: usize, repeat: usize) -> CliResult<(EvalReport, bool)> {
    let sim = SimulateArgs {
        profile: args.profile,
        fovs: args.fovs,
        k,
        size: args.size,
        snr: args.snr,
        seed: repeat_seed(args.seed, repeat),
        scene: None,
        init_nuc_error: args.init_nuc_error,
        no_calibration: false,
        out: PathBuf::new(),
    };
    let (ds, calib) = simulated_dataset(&sim)?;
    let cfg = SolverConfig {
        outer_iterations: args.cycles,
        lsqr_iterations: args.lsqr_iters,
        joint_iterations: args.joint_iters,
        ..Default::default()
    };
    let state = solve_with_observer(&ds.observations, calib.as_ref(), &cfg, |_| {})?;
    if let Some((cycle, stage, before, after)) = state.block_descent_violation() {
        log::warn!(
            "k={k} repeat {repeat}: objective rose in cycle {cycle} {}: {before:e} -> {after:e}",
            stage.as_str()
        );
    }
    let report = evaluate(
        &ds.truth.pivots,
        &state.x,
        (&ds.truth.profile.gain, &ds.truth.profile.offset),
        (&state.map.gain, &state.map.offset),
        Some(&state.map.support),
        DEFAULT_MARGIN,
    )?;
    Ok((report, state.block_descent_violation().is_some()))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs every (k, repeat) pair on the current rayon pool.
pub fn sweep_table(args: &SweepArgs) -> CliResult<SweepTable> {
    if args.k_list.is_empty() || args.repeats == 0 {
        return Err(CliError::Usage("--k-list must be nonempty and --repeats >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = args
        .k_list
        .iter()
        .flat_map(|&k| (0..args.repeats).map(move |r| (k, r)))
        .collect();
    let start = Instant::now();
    let reports = jobs
        .par_iter()
        .map(|&(k, r)| {
            let (rep, violated) = sweep_one(args, k, r)?;
            progress(
                "sweep_run",
                &serde_json::json!({
                    "k": k,
                    "repeat": r,
                    "pearson": rep.mean_pearson,
                    "rmse_gv": rep.mean_rmse,
                    "elapsed_seconds": start.elapsed().as_secs_f64(),
                }),
            );
            Ok((rep, violated))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows = args
        .k_list
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let chunk = &reports[i * args.repeats..(i + 1) * args.repeats];
            let pcs: Vec<f64> = chunk.iter().map(|(r, _)| r.mean_pearson).collect();
            let rmses: Vec<f64> = chunk.iter().map(|(r, _)| r.mean_rmse).collect();
            let (mean_pearson, pearson_std) = mean_std(&pcs);
            let (mean_rmse, rmse_std) = mean_std(&rmses);
            SweepRow {
                k,
                repeats: args.repeats,
                mean_pearson,
                mean_rmse,
                pearson_std,
                rmse_std,
                descent_violations: chunk.iter().filter(|(_, v)| *v).count(),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

pub fn cmd_sweep_k(args: &SweepArgs) -> CliResult<SweepTable> {
    let table = sweep_table(args)?;
    if let Some(out) = &args.out {
        layout::ensure_dir(out)?;
        let mut w = Written::new(out);
        w.bytes("sweep.txt".into(), table.to_text().as_bytes())?;
        let mut m = RunManifest::new("sweep-k");
        let ks: Vec<String> = args.k_list.iter().map(|k| k.to_string()).collect();
        m.set("k_list", ks.join(","));
        m.set("repeats", args.repeats);
        m.set("seed", args.seed);
        m.set("profile", ProfileKind::from(args.profile).as_str());
        m.set("fovs", args.fovs);
        m.set("size", args.size);
        m.set("snr", args.snr);
        m.set("init_nuc_error", args.init_nuc_error);
        m.set("cycles", args.cycles);
        m.set("lsqr_iters", args.lsqr_iters);
        m.set("joint_iters", args.joint_iters);
        m.add_checksums(&w)?;
        m.write(out)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the reproduced outputs.
    #[arg(long)]
    pub out: PathBuf,
}

fn profile_arg(m: &RunManifest) -> CliResult<ProfileArg> {
    match m.require("profile")? {
        "radial" => Ok(ProfileArg::Radial),
        "sine" => Ok(ProfileArg::Sine),
        other => Err(CliError::Usage(format!(
            "manifest profile '{other}' cannot be replayed"
        ))),
    }
}

fn init_arg(raw: &str) -> CliResult<InitArg> {
    InitArg::from_str(raw, false).map_err(|_| CliError::Usage(format!("manifest init '{raw}' is unknown")))
}

/// Re-runs the command recorded in a manifest into `out` and checks that every
/// recorded checksum is reproduced. Returns the number of files compared.
pub fn cmd_replay(args: &ReplayArgs) -> CliResult<usize> {
    let old = RunManifest::read(&args.manifest)?;
    let new = match old.require("command")? {
        "simulate" => cmd_simulate(&SimulateArgs {
            profile: profile_arg(&old)?,
            fovs: old.parse("fovs")?,
            k: old.parse("k")?,
            size: old.parse("size")?,
            snr: old.parse("snr")?,
            seed: old.parse("seed")?,
            scene: match old.require("scene")? {
                "procedural" => None,
                p => Some(PathBuf::from(p)),
            },
            init_nuc_error: old.parse("init_nuc_error")?,
            no_calibration: !old.parse::<bool>("calibration")?,
            out: args.out.clone(),
        })?,
        "restore" => cmd_restore(&RestoreArgs {
            input: PathBuf::from(old.require("input")?),
            out: Some(args.out.clone()),
            cycles: old.parse("cycles")?,
            lsqr_iters: old.parse("lsqr_iters")?,
            joint_iters: old.parse("joint_iters")?,
            init: init_arg(old.require("init")?)?,
            timings: false,
        })?,
        "evaluate" => {
            let eval = EvaluateArgs {
                truth: PathBuf::from(old.require("truth")?),
                results: PathBuf::from(old.require("results")?),
                out: Some(args.out.clone()),
                margin: old.parse("margin")?,
            };
            cmd_evaluate(&eval)?;
            RunManifest::read(&args.out.join(MANIFEST_NAME))?
        }
        other => return Err(CliError::Usage(format!("command '{other}' cannot be replayed"))),
    };
    compare_checksums(&old, &new)
}

fn compare_checksums(old: &RunManifest, new: &RunManifest) -> CliResult<usize> {
    let (a, b) = (old.checksums(), new.checksums());
    if a.len() != b.len() {
        return Err(CliError::Mismatch(format!(
            "{} files recorded, {} reproduced",
            a.len(),
            b.len()
        )));
    }
    for ((fa, ha), (fb, hb)) in a.iter().zip(&b) {
        if fa != fb {
            return Err(CliError::Mismatch(format!("file list differs at {fa} vs {fb}")));
        }
        if ha != hb {
            return Err(CliError::Mismatch(format!("{fa} differs from the recorded run")));
        }
    }
    Ok(a.len())
}

/// Applies `NUC_THREADS` to the global rayon pool, if set.
pub fn configure_threads() -> CliResult<()> {
    if let Ok(raw) = std::env::var("NUC_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("NUC_THREADS={raw} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))?;
    }
    Ok(())
}
