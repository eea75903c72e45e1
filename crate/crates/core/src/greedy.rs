//! Greedy expansion engine with prescribed coefficients.
//!
//! Step `m` picks `φ_m` with `<f_{m-1}, φ_m> >= t_m sup_g <f_{m-1}, g>` and
//! sets `f_m = f_{m-1} - c_m φ_m`. The run stops as soon as the remainder has
//! empty support, and is otherwise truncated at `max_steps`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::{AtomId, Dictionary, SelectionError};
use crate::scalar::Scalar;
use crate::sequences::{Schedule, SequenceError};
use crate::vector::SparseVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("selection plan has no entry for step {0}")]
    PlanExhausted(usize),
    #[error("atom {0} cannot be realized by the dictionary")]
    UnknownAtom(AtomId),
}

/// How `φ_m` is chosen among admissible atoms.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionPolicy {
    /// Always the sup witness (smallest id on ties).
    MaxGreedy,
    /// Step `m` uses `plan[m - 1]`, validated against the weak greedy rule.
    Scripted(Vec<AtomId>),
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<S> {
    pub m: usize,
    pub atom: AtomId,
    pub c: S,
    pub t: S,
    /// `<f_{m-1}, φ_m>`
    pub ip: S,
    /// `sup_g <f_{m-1}, g>`
    pub sup: S,
    /// `‖f_m‖`
    pub residual_norm: S,
    pub block: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    /// The step budget (or an early-exit threshold) ended the run after
    /// `steps` iterations.
    Exhausted { steps: usize },
    /// `f_{m-1}` had empty support.
    Stopped { m: usize },
    /// Step `step` could not be carried out.
    Aborted { step: usize, reason: String },
}

/// Why a run ended without reaching the stop rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truncation {
    MaxSteps,
    ResidualBelow { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace<S> {
    pub steps: Vec<StepRecord<S>>,
    /// `‖f‖`; absent for traces loaded without metadata.
    pub initial_norm: Option<S>,
    pub status: Status,
    pub max_steps: usize,
    pub truncation: Option<Truncation>,
    /// Final remainder, kept by the engine but not serialized.
    pub remainder: Option<SparseVector<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn residual_norms(&self) -> Vec<S> {
        self.steps.iter().map(|s| s.residual_norm).collect()
    }

    /// `‖f_M‖` after the last step, or `‖f‖` for an empty trace.
    pub fn final_residual_norm(&self) -> Option<S> {
        self.steps
            .last()
            .map(|s| s.residual_norm)
            .or(self.initial_norm)
    }

    /// `‖f_{m-1}‖` for the (1-based) step `m`.
    pub fn norm_before(&self, m: usize) -> Option<S> {
        if m <= 1 {
            self.initial_norm
        } else {
            self.steps.get(m - 2).map(|s| s.residual_norm)
        }
    }

    /// Step indices grouped by block, or `None` when some step carries no
    /// block attribution.
    pub fn block_partition(&self) -> Option<BTreeMap<u32, Vec<usize>>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for s in &self.steps {
            out.entry(s.block?).or_default().push(s.m);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions<S> {
    pub max_steps: usize,
    /// Ends the run (as `Exhausted`) once `‖f_m‖` drops below this value.
    pub early_exit: Option<S>,
}

impl<S> RunOptions<S> {
    pub fn steps(max_steps: usize) -> Self {
        Self {
            max_steps,
            early_exit: None,
        }
    }
}

/// Runs the weak greedy expansion of `f`.
///
/// Errors during a step (inadmissible scripted atom, exhausted explicit
/// sequence, missing plan entry) end the run with [`Status::Aborted`]; the
/// steps recorded so far are kept.
pub fn run<S: Scalar>(
    f: &SparseVector<S>,
    dictionary: &Dictionary<S>,
    schedule: &Schedule<S>,
    policy: &SelectionPolicy,
    options: RunOptions<S>,
) -> Trace<S> {
    let mut remainder = f.clone();
    let mut steps = Vec::with_capacity(options.max_steps.min(1 << 20));
    let mut truncation = None;
    let mut m = 1;
    let status = loop {
        if remainder.is_zero() {
            break Status::Stopped { m };
        }
        if m > options.max_steps {
            truncation = Some(Truncation::MaxSteps);
            break Status::Exhausted { steps: m - 1 };
        }
        if let Some(threshold) = options.early_exit {
            let current = steps
                .last()
                .map_or_else(|| remainder.norm(), |s: &StepRecord<S>| s.residual_norm);
            if current < threshold {
                truncation = Some(Truncation::ResidualBelow {
                    threshold: threshold.as_f64(),
                });
                break Status::Exhausted { steps: m - 1 };
            }
        }
        match step(&remainder, dictionary, schedule, policy, m) {
            Ok((record, next)) => {
                steps.push(record);
                remainder = next;
                m += 1;
            }
            Err(e) => {
                break Status::Aborted {
                    step: m,
                    reason: e.to_string(),
                }
            }
        }
    };
    Trace {
        steps,
        initial_norm: Some(f.norm()),
        status,
        max_steps: options.max_steps,
        truncation,
        remainder: Some(remainder),
    }
}

fn step<S: Scalar>(
    remainder: &SparseVector<S>,
    dictionary: &Dictionary<S>,
    schedule: &Schedule<S>,
    policy: &SelectionPolicy,
    m: usize,
) -> Result<(StepRecord<S>, SparseVector<S>), EngineError> {
    let t = schedule.weakening.eval(m)?;
    let c = schedule.coefficients.eval(m)?;
    let scripted = match policy {
        SelectionPolicy::MaxGreedy => None,
        SelectionPolicy::Scripted(plan) => {
            Some(plan.get(m - 1).ok_or(EngineError::PlanExhausted(m))?)
        }
    };
    let sel = dictionary.select(remainder, t, scripted)?;
    let next = remainder.subtract_scaled(c, &sel.atom.vector);
    let record = StepRecord {
        m,
        block: sel.atom.id.block_index(),
        atom: sel.atom.id,
        c,
        t,
        ip: sel.ip,
        sup: sel.sup,
        residual_norm: next.norm(),
    };
    Ok((record, next))
}

/// Approximant `G_M = ∑ c_m φ_m` over the recorded steps.
///
/// Atoms are realized through `dictionary`, which must be the one the trace
/// was produced with.
pub fn reconstruct<S: Scalar>(
    trace: &Trace<S>,
    dictionary: &Dictionary<S>,
) -> Result<SparseVector<S>, EngineError> {
    trace.steps.iter().try_fold(SparseVector::zero(), |acc, s| {
        let atom = dictionary
            .atom(&s.atom)
            .ok_or_else(|| EngineError::UnknownAtom(s.atom.clone()))?;
        Ok(acc.add_scaled(s.c, &atom.vector))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{CoefficientSequence, WeakeningSequence};
    use crate::vector::Coord;

    type V = SparseVector<f64>;
    type D = Dictionary<f64>;

    fn schedule(c: CoefficientSequence<f64>, t: f64) -> Schedule<f64> {
        Schedule::new(c, WeakeningSequence::Constant(t))
    }

    fn id(s: &str) -> AtomId {
        s.parse().unwrap()
    }

    #[test]
    fn one_step_annihilation() {
        let tr = run(
            &V::basis(1),
            &D::symmetrized_onb(),
            &schedule(CoefficientSequence::Explicit(vec![1.0]), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(10),
        );
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.steps[0].atom, id("+e1"));
        assert_eq!(tr.steps[0].residual_norm, 0.0);
        assert_eq!(tr.status, Status::Stopped { m: 2 });
        assert!(tr.remainder.unwrap().is_zero());
        assert_eq!(tr.truncation, None);
    }

    #[test]
    fn two_hand_computed_steps() {
        let f = V::from_pairs(&[(1, 0.75)]).unwrap();
        let d = D::symmetrized_onb();
        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::Explicit(vec![0.5, 0.25]), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(10),
        );
        assert_eq!(tr.len(), 2);
        assert!(tr.steps.iter().all(|s| s.atom == id("+e1")));
        assert_eq!(tr.steps[0].residual_norm, 0.25);
        assert_eq!(tr.steps[0].ip, 0.75);
        assert_eq!(tr.steps[1].ip, 0.25);
        assert_eq!(tr.status, Status::Stopped { m: 3 });
        assert_eq!(reconstruct(&tr, &d).unwrap(), f);
    }

    #[test]
    fn incomplete_dictionary_leaves_orthogonal_part() {
        let f = V::from_dense(&[1.0, 1.0]);
        let d = D::finite(vec![V::basis(1)]).unwrap();
        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::harmonic(), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(1000),
        );
        assert_eq!(tr.status, Status::Exhausted { steps: 1000 });
        assert_eq!(tr.truncation, Some(Truncation::MaxSteps));
        let last = tr.final_residual_norm().unwrap();
        assert!((1.0..1.0 + 1e-5).contains(&last), "{last}");
        assert_eq!(tr.remainder.as_ref().unwrap().get(Coord::Plain(2)), 1.0);
    }

    #[test]
    fn reconstruct_matches_remainder() {
        let f = V::from_dense(&[0.3, -0.2, 0.9, 0.05]);
        let d = D::finite(vec![
            V::from_dense(&[1.0, 1.0, 0.0, 0.0]),
            V::from_dense(&[0.0, 1.0, -1.0, 0.0]),
            V::from_dense(&[0.0, 0.0, 1.0, 1.0]),
            V::basis(4),
            V::basis(1),
        ])
        .unwrap();
        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::power(0.7), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(500),
        );
        let g = reconstruct(&tr, &d).unwrap();
        let rem = tr.remainder.clone().unwrap();
        let diff = f.subtract_scaled(1.0, &g).subtract_scaled(1.0, &rem);
        assert!(diff.iter().all(|(_, x)| x.abs() <= 1e-10));
        let gap = f.subtract_scaled(1.0, &g).norm();
        assert!((gap - tr.final_residual_norm().unwrap()).abs() <= 1e-9);

        let empty = run(
            &f,
            &d,
            &schedule(CoefficientSequence::harmonic(), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(0),
        );
        assert!(reconstruct(&empty, &d).unwrap().is_zero());
    }

    #[test]
    fn scripted_violation_aborts() {
        let f = V::from_pairs(&[(1, 0.1), (2, 0.5)]).unwrap();
        let tr = run(
            &f,
            &D::symmetrized_onb(),
            &schedule(CoefficientSequence::harmonic(), 0.5),
            &SelectionPolicy::Scripted(vec![id("+e1")]),
            RunOptions::steps(5),
        );
        assert!(tr.is_empty());
        assert!(matches!(tr.status, Status::Aborted { step: 1, .. }));
    }

    #[test]
    fn plan_and_sequence_exhaustion_abort() {
        let f = V::from_pairs(&[(1, 0.5)]).unwrap();
        let d = D::symmetrized_onb();
        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::Explicit(vec![0.1, 0.1, 0.1]), 1.0),
            &SelectionPolicy::Scripted(vec![id("+e1")]),
            RunOptions::steps(5),
        );
        assert_eq!(tr.len(), 1);
        assert!(matches!(tr.status, Status::Aborted { step: 2, .. }));

        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::Explicit(vec![0.1]), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(5),
        );
        assert!(
            matches!(tr.status, Status::Aborted { step: 2, ref reason } if reason.contains("no term 2"))
        );
    }

    #[test]
    fn early_exit_is_exhausted_not_stopped() {
        let f = V::from_dense(&[0.8, -0.6]);
        let tr = run(
            &f,
            &D::symmetrized_onb(),
            &schedule(CoefficientSequence::harmonic(), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions {
                max_steps: 100_000,
                early_exit: Some(0.05),
            },
        );
        assert!(matches!(tr.status, Status::Exhausted { .. }));
        assert_eq!(
            tr.truncation,
            Some(Truncation::ResidualBelow { threshold: 0.05 })
        );
        assert!(tr.final_residual_norm().unwrap() < 0.05);
        assert!(tr.steps[..tr.len() - 1]
            .iter()
            .all(|s| s.residual_norm >= 0.05));
    }

    #[test]
    fn direct_sum_steps_carry_blocks() {
        let d = D::direct_sum(vec![
            D::symmetrized_onb(),
            D::finite(vec![V::basis(1), V::basis(2)]).unwrap(),
        ])
        .unwrap();
        let f = V::from_entries([
            (Coord::Block(1, 1), 0.5),
            (Coord::Block(1, 3), -0.2),
            (Coord::Block(2, 2), 0.7),
        ])
        .unwrap();
        let tr = run(
            &f,
            &d,
            &schedule(CoefficientSequence::harmonic(), 1.0),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(2000),
        );
        assert_eq!(tr.steps[0].atom, id("b2:y2"));
        let parts = tr.block_partition().unwrap();
        let mut all: Vec<usize> = parts.values().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (1..=tr.len()).collect::<Vec<_>>());
        assert_eq!(parts.len(), 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let f = V::from_dense(&[0.11, -0.7, 0.3]);
        let d = D::finite(vec![
            V::from_dense(&[1.0, 2.0, 0.0]),
            V::from_dense(&[0.0, 1.0, 1.0]),
            V::from_dense(&[1.0, 0.0, -1.0]),
        ])
        .unwrap();
        let s = schedule(CoefficientSequence::power(0.8), 0.7);
        let a = run(
            &f,
            &d,
            &s,
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(3000),
        );
        let b = run(
            &f,
            &d,
            &s,
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(3000),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn f32_runs() {
        let f = SparseVector::<f32>::from_dense(&[0.5, 0.25]);
        let tr = run(
            &f,
            &Dictionary::<f32>::symmetrized_onb(),
            &Schedule::new(
                CoefficientSequence::Explicit(vec![0.5, 0.25]),
                WeakeningSequence::Constant(1.0),
            ),
            &SelectionPolicy::MaxGreedy,
            RunOptions::steps(10),
        );
        assert_eq!(tr.status, Status::Stopped { m: 3 });
    }
}
