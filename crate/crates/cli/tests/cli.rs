use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nuc_cli::commands::*;
use nuc_cli::layout::{self, observation_name, OBS_DIR};
use nuc_cli::manifest::{RunManifest, MANIFEST_NAME};
use nuc_cli::CliError;
use nuc_core::io::{read_homography, write_field, write_nucf};
use nuc_core::solver::{GainOffsetMap, SolverState};
use nuc_core::{Homography, ImageGrid};

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn small_sim(out: &Path, seed: u64) -> SimulateArgs {
    SimulateArgs {
        profile: ProfileArg::Radial,
        fovs: 2,
        k: 3,
        size: 30,
        snr: 1000.0,
        seed,
        scene: None,
        init_nuc_error: 0.05,
        no_calibration: false,
        out: out.to_path_buf(),
    }
}

fn quick_restore(input: &Path, out: Option<PathBuf>) -> RestoreArgs {
    RestoreArgs {
        input: input.to_path_buf(),
        out,
        cycles: 2,
        lsqr_iters: 20,
        joint_iters: 30,
        init: InitArg::Auto,
        timings: false,
    }
}

fn nuc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nuc"))
}

#[test]
fn default_simulation_writes_64_observations_in_8_groups() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = small_sim(dir.path(), 1);
    args.fovs = 8;
    args.k = 8;
    args.size = 66;
    let m = cmd_simulate(&args).unwrap();
    assert_eq!(m.get("observations"), Some("64"));
    for g in 0..8 {
        for o in 0..8 {
            assert!(dir.path().join(OBS_DIR).join(observation_name(g, o)).is_file());
        }
    }
    assert!(!dir.path().join(OBS_DIR).join(observation_name(8, 0)).exists());
    assert_eq!(layout::read_observations(dir.path()).unwrap().total(), 64);
}

#[test]
fn minimal_dataset_has_identity_homography() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = small_sim(dir.path(), 3);
    args.fovs = 1;
    args.k = 1;
    cmd_simulate(&args).unwrap();
    let h = read_homography(&dir.path().join("truth/H_g00_o00.txt")).unwrap();
    assert_eq!(h, Homography::identity());
}

#[test]
fn simulate_restore_evaluate_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_simulate(&small_sim(&a, 9)).unwrap();
    cmd_simulate(&small_sim(&b, 9)).unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));

    let other = dir.path().join("c");
    cmd_simulate(&small_sim(&other, 10)).unwrap();
    assert_ne!(snapshot(&a), snapshot(&other));

    // equal input path, two output directories
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    cmd_restore(&quick_restore(&a, Some(r1.clone()))).unwrap();
    cmd_restore(&quick_restore(&a, Some(r2.clone()))).unwrap();
    assert_eq!(snapshot(&r1), snapshot(&r2));

    let eval = |out: &Path| EvaluateArgs {
        truth: a.clone(),
        results: r1.clone(),
        out: Some(out.to_path_buf()),
        margin: 2,
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    cmd_evaluate(&eval(&e1)).unwrap();
    cmd_evaluate(&eval(&e2)).unwrap();
    assert_eq!(snapshot(&e1), snapshot(&e2));
}

#[test]
fn restoration_never_reads_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_simulate(&small_sim(&a, 11)).unwrap();
    cmd_simulate(&small_sim(&b, 11)).unwrap();
    fs::remove_dir_all(b.join("truth")).unwrap();
    fs::remove_dir_all(b.join("masks")).unwrap();
    let ma = cmd_restore(&quick_restore(&a, None)).unwrap();
    let mb = cmd_restore(&quick_restore(&b, None)).unwrap();
    assert_eq!(ma.checksums(), mb.checksums());
    let mut sa = snapshot(&a.join("results"));
    let mut sb = snapshot(&b.join("results"));
    sa.remove(MANIFEST_NAME);
    sb.remove(MANIFEST_NAME);
    assert_eq!(sa, sb);
}

#[test]
fn restore_of_an_uncorrupted_static_dataset_fits_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cmd_simulate(&small_sim(&sim, 12)).unwrap();
    let truth = layout::read_truth(&sim).unwrap();
    let root = dir.path().join("ident");
    fs::create_dir_all(root.join(OBS_DIR)).unwrap();
    for (g, x) in truth.pivots.iter().enumerate() {
        for o in 0..3 {
            write_nucf(&root.join(OBS_DIR).join(observation_name(g, o)), x).unwrap();
        }
    }
    write_field(
        &root.join("obs/calib_gain.txt"),
        &ImageGrid::filled(30, 30, 1.0).unwrap(),
    )
    .unwrap();
    write_field(&root.join("obs/calib_offset.txt"), &ImageGrid::zeros(30, 30).unwrap()).unwrap();
    let mut args = quick_restore(&root, None);
    args.init = InitArg::Calib;
    let m = cmd_restore(&args).unwrap();
    let objective: f64 = m.parse("final_objective").unwrap();
    assert!(objective <= 1e-18, "{objective}");
}

#[test]
fn evaluating_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cmd_simulate(&small_sim(&sim, 13)).unwrap();
    let t = layout::read_truth(&sim).unwrap();
    let (h, w) = t.gain.dims();
    let map = GainOffsetMap::new(t.gain.clone(), t.offset.clone(), nuc_core::Mask::filled(h, w, true)).unwrap();
    let hs = vec![vec![Homography::identity(); 3]; t.pivots.len()];
    let state = SolverState::from_parts(t.pivots.clone(), map, hs, 1e-9);
    let results = dir.path().join("perfect");
    layout::write_results(&results, &state).unwrap();
    let report = cmd_evaluate(&EvaluateArgs {
        truth: sim.join("truth"),
        results: results.clone(),
        out: None,
        margin: 2,
    })
    .unwrap();
    assert!(report.mean_rmse < 1e-9);
    assert!((report.mean_pearson - 1.0).abs() < 1e-12);
    assert!(report.gain_rmse_percent < 1e-9 && report.offset_rmse < 1e-9);
    for name in [
        "report.txt",
        "report.json",
        "diff_g00.pgm",
        "diff_g01.pgm",
        MANIFEST_NAME,
    ] {
        assert!(results.join("evaluation").join(name).is_file(), "{name}");
    }
}

#[test]
fn replay_reproduces_checksums_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cmd_simulate(&small_sim(&sim, 14)).unwrap();
    let n = cmd_replay(&ReplayArgs {
        manifest: sim.join(MANIFEST_NAME),
        out: dir.path().join("again"),
    })
    .unwrap();
    assert_eq!(n, 2 + 2 + 3 * 6 + 2);

    let mut m = RunManifest::read(&sim.join(MANIFEST_NAME)).unwrap();
    m.set("checksum.obs/y_g00_o00.nucf", "0".repeat(64));
    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    m.write(&bad).unwrap();
    let err = cmd_replay(&ReplayArgs {
        manifest: bad.join(MANIFEST_NAME),
        out: dir.path().join("again2"),
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Mismatch(_)), "{err}");

    cmd_restore(&quick_restore(&sim, None)).unwrap();
    let n = cmd_replay(&ReplayArgs {
        manifest: sim.join("results").join(MANIFEST_NAME),
        out: dir.path().join("restored_again"),
    })
    .unwrap();
    assert!(n > 0);
}

#[test]
fn sweep_has_one_row_per_k() {
    let args = SweepArgs {
        k_list: vec![2, 3],
        repeats: 1,
        seed: 5,
        profile: ProfileArg::Sine,
        fovs: 1,
        size: 30,
        snr: 1000.0,
        init_nuc_error: 0.05,
        cycles: 1,
        lsqr_iters: 10,
        joint_iters: 10,
        out: None,
    };
    let t = sweep_table(&args).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[0].k, 2);
    assert!(t
        .rows
        .iter()
        .all(|r| r.mean_pearson.is_finite() && r.mean_rmse.is_finite()));
    assert_eq!(t.to_text().lines().count(), 3);
    assert_eq!(t, sweep_table(&args).unwrap());
    assert_ne!(repeat_seed(5, 0), repeat_seed(5, 1));
}

#[test]
fn binary_reports_usage_errors_with_status_2() {
    let out = nuc().args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = nuc()
        .args(["simulate", "--fovs", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = nuc()
        .args(["restore", "--in"])
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn binary_pipeline_prints_report_and_json_progress() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let st = nuc()
        .args([
            "simulate", "--fovs", "1", "--k", "3", "--size", "30", "--seed", "4", "--out",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());
    let out = nuc()
        .args(["restore", "--cycles", "1", "--joint-iters", "10", "--in"])
        .arg(&data)
        .env("NUC_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let events: Vec<serde_json::Value> = stderr
        .lines()
        .map(|l| serde_json::from_str(l).expect("progress lines are JSON"))
        .collect();
    assert!(events.iter().any(|e| e["event"] == "stage"));
    let out = nuc()
        .arg("evaluate")
        .arg("--truth")
        .arg(&data)
        .arg("--results")
        .arg(data.join("results"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("mean_pearson=")));

    let out = nuc().args(["sweep-k", "--repeats", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = nuc()
        .args(["simulate", "--out"])
        .arg(dir.path().join("e"))
        .env("NUC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
