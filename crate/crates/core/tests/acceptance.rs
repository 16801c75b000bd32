//! One test per acceptance criterion; tolerances live in `ffmxu::acceptance`.
//! Run with `--nocapture` to see the measured values.

use ffmxu::acceptance::{self, CriterionOutcome};

fn check(o: CriterionOutcome) {
    println!("{o}");
    assert!(o.passed, "{o}");
}

#[test]
fn c01_accumulator_bounds() {
    check(acceptance::accumulator_bounds());
}

#[test]
fn c02_accumulator_grid() {
    check(acceptance::probe_grid());
}

#[test]
fn c03_exactness_boundary_and_staging() {
    check(acceptance::exactness_boundary());
}

#[test]
fn c04_isolation_isomorphism() {
    check(acceptance::isolation());
}

#[test]
fn c05_erns_correctness_and_counts() {
    check(acceptance::erns_counts());
}

#[test]
fn c06_scheduler_metrics() {
    check(acceptance::scheduler_metrics());
}

#[test]
fn c07_validator_soundness_and_completeness() {
    check(acceptance::validator());
}

#[test]
fn c08_cost_model() {
    check(acceptance::cost_model());
}

#[test]
fn c09_trace_replay() {
    check(acceptance::trace_replay());
}

#[test]
fn c10_no_crossover() {
    check(acceptance::crossover());
}
