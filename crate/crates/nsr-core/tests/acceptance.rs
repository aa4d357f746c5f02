//! Acceptance gate: the analytic property suite followed by the desk-scale
//! training reproduction. Each criterion prints a single `[PASS]`/`[FAIL]`
//! line (run with `--nocapture` to watch them stream).
//!
//! The property suite runs in seconds and must pass before any training is
//! attempted; the reproduction trains the full method zoo on the synthetic
//! heartbeat corpus and checks clean accuracy, the robustness ordering under
//! 100-step PGD, attack-strength monotonicity, the adversarial-training
//! curve crossing, the reduced-scale SPSA ordering, and the gradient
//! alignment diagnostic.

use nsr_core::checks;
use nsr_core::experiment::{run_experiment, ExperimentConfig};

const FUZZ_TRIALS: usize = 10_000;

#[test]
fn acceptance() {
    // Property suite first; abort before training if any analytic check fails.
    let outcomes = checks::run_all(7, FUZZ_TRIALS).expect("property suite must run");
    let mut all = true;
    for o in &outcomes {
        println!("[{}] {} — {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        all &= o.passed;
    }
    assert!(all, "analytic property suite failed; skipping the training reproduction");

    let outcome = run_experiment(&ExperimentConfig::default()).expect("experiment must run");
    for c in &outcome.criteria {
        println!("[{}] {} — {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> =
        outcome.criteria.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
