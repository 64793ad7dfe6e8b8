mod common;

use common::{is_monotone, mondrian_recovery, monotone_suite};
use intrinsic::solver::SolveConfig;

#[test]
fn trajectories_never_rise() {
    for (name, trajectory) in monotone_suite() {
        assert!(trajectory.len() > 1, "{name}: no iterations");
        assert!(is_monotone(&trajectory), "{name}: {trajectory:?}");
    }
}

#[test]
fn small_mondrian_beats_identity_reflectance() {
    let cfg = SolveConfig {
        max_iters: 300,
        ..Default::default()
    };
    let rec = mondrian_recovery(32, 6, 0.4, 5, &cfg);
    assert!(rec.monotone);
    assert!(
        rec.solved_si_mse < rec.baseline_si_mse,
        "solved {} baseline {}",
        rec.solved_si_mse,
        rec.baseline_si_mse
    );
}
