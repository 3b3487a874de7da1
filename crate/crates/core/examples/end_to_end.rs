//! Simulate, restore and score one dataset.
//!
//! `cargo run --release --example end_to_end -- [radial|sine] [joint_iterations] [cycles] [seed]`

use nuc_core::metrics::{evaluate, DEFAULT_MARGIN};
use nuc_core::scene_sim::{simulate, ProfileKind, SimulationConfig};
use nuc_core::solver::{initial_nuc, solve_with_observer, SolverConfig};

fn main() -> nuc_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: ProfileKind = args.first().map_or(Ok(ProfileKind::Radial), |s| s.parse())?;
    let joint = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cycles = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let sim = SimulationConfig {
        profile: kind,
        seed,
        ..Default::default()
    };
    let ds = simulate(&sim)?;
    let init = initial_nuc(&ds.truth.profile, 0.05, seed)?;
    let use_stats = std::env::var("STATS_INIT").is_ok();
    let cfg = SolverConfig {
        outer_iterations: cycles,
        joint_iterations: joint,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let state = solve_with_observer(&ds.observations, (!use_stats).then_some(&init), &cfg, |r| {
        eprintln!(
            "{:>2} {:<12} {:.6e} {:.1}s",
            r.cycle,
            r.stage.as_str(),
            r.objective,
            r.elapsed_seconds
        )
    })?;
    let report = evaluate(
        &ds.truth.pivots,
        &state.x,
        (&ds.truth.profile.gain, &ds.truth.profile.offset),
        (&state.map.gain, &state.map.offset),
        None,
        DEFAULT_MARGIN,
    )?;
    let corner: f64 = ds
        .truth
        .homographies
        .iter()
        .flatten()
        .zip(state.homographies.iter().flatten())
        .map(|(t, e)| t.corner_transfer_error(e, sim.size, sim.size))
        .sum::<f64>()
        / ds.observations.total() as f64;
    println!("{}", report.to_text());
    println!("mean_corner_error_px={corner:.6}");
    println!("seconds={:.1}", start.elapsed().as_secs_f64());
    Ok(())
}
