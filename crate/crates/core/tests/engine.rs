//! Cross-module checks: engine, serialization and analysis together.

use greedy_core::analysis::{
    descent_window_start, verify_descent_inequality, verify_energy_identity,
    verify_greedy_condition,
};
use greedy_core::counterexample::{run_counterexample, CounterexampleConfig};
use greedy_core::dictionary::{AtomId, CoherenceEstimate, Dictionary, SquareMatrix};
use greedy_core::greedy::{reconstruct, run, RunOptions, SelectionPolicy, Status};
use greedy_core::io::{read_trace_csv, write_trace_csv, TraceMeta};
use greedy_core::sequences::{CoefficientSequence, Schedule, WeakeningSequence};
use greedy_core::vector::SparseVector;

type V = SparseVector<f64>;
type D = Dictionary<f64>;

fn harmonic(t: f64) -> Schedule<f64> {
    Schedule::new(
        CoefficientSequence::harmonic(),
        WeakeningSequence::Constant(t),
    )
}

#[test]
fn approximant_plus_remainder_is_the_target() {
    let d = D::finite(vec![
        V::from_dense(&[1.0, 0.0, 0.0]),
        V::from_dense(&[0.6, 0.8, 0.0]),
        V::from_dense(&[0.0, 0.6, 0.8]),
        V::from_dense(&[1.0, 1.0, 1.0]),
    ])
    .unwrap();
    let f = V::from_dense(&[0.9, -0.4, 1.3]);
    let tr = run(
        &f,
        &d,
        &harmonic(0.8),
        &SelectionPolicy::MaxGreedy,
        RunOptions::steps(3_000),
    );
    let g = reconstruct(&tr, &d).unwrap();
    let rem = tr.remainder.clone().unwrap();
    let diff = f
        .clone()
        .subtract_scaled(1.0, &g)
        .subtract_scaled(1.0, &rem);
    assert!(diff.norm() < 1e-9, "{}", diff.norm());
    assert_eq!(rem.norm(), tr.final_residual_norm().unwrap());
}

#[test]
fn counterexample_trace_survives_csv() {
    let cfg = CounterexampleConfig::new(0.6, 4).unwrap();
    let out = run_counterexample(&cfg, usize::MAX).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&out.trace, &mut buf).unwrap();
    let mut back = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(back.steps, out.trace.steps);
    TraceMeta::of(&out.trace).apply(&mut back);

    let report = verify_energy_identity(&back, 1e-10).merge(verify_greedy_condition(&back, 1e-12));
    assert!(report.all_passed, "{report:?}");
    // Without metadata the first step cannot be checked, but nothing fails.
    let bare = read_trace_csv(buf.as_slice()).unwrap();
    let e = verify_energy_identity(&bare, 1e-10);
    assert!(e.all_passed);
    assert_eq!(e.checks[0].applicable, back.len() - 1);
}

#[test]
fn descent_is_a_hard_check_with_the_exact_constant() {
    // For ±e_1..±e_d in R^d the constant is 1/√d.
    let d = D::finite((1..=3).map(V::basis).collect()).unwrap();
    let f = V::from_dense(&[3.0, -2.0, 2.5]);
    let tr = run(
        &f,
        &d,
        &harmonic(1.0),
        &SelectionPolicy::MaxGreedy,
        RunOptions::steps(2_000),
    );
    let c = CoherenceEstimate::exact(1.0 / 3f64.sqrt());
    let eps = 0.1;
    let start = descent_window_start(&tr, c.value, eps).unwrap();
    assert_eq!(start, 11);
    let r = verify_descent_inequality(&tr, &c, eps, start, 1e-12).unwrap();
    let check = &r.checks[0];
    assert!(
        check.hard && check.passed && check.applicable > 0,
        "{check:?}"
    );
}

#[test]
fn negated_ids_resolve_across_a_pushforward() {
    let base = D::finite(vec![V::from_dense(&[1.0, 0.0]), V::from_dense(&[0.0, 1.0])]).unwrap();
    let q = SquareMatrix::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
    let pushed = D::pushforward(&base, q).unwrap();
    let id: AtomId = "-y2".parse().unwrap();
    let atom = pushed.atom(&id).unwrap();
    // Q maps -e2 to (1, 0).
    assert_eq!(atom.vector, V::basis(1));

    let f = V::from_dense(&[2.0, 0.0]);
    let tr = run(
        &f,
        &pushed,
        &Schedule::new(
            CoefficientSequence::Explicit(vec![2.0]),
            WeakeningSequence::Constant(1.0),
        ),
        &SelectionPolicy::Scripted(vec![id]),
        RunOptions::steps(5),
    );
    assert_eq!(tr.status, Status::Stopped { m: 2 });
}
