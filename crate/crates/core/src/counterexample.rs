//! Divergent weak greedy expansion over the symmetrized canonical basis.
//!
//! For a weakening parameter `t < 1` the target has consecutive coordinate
//! groups; group `j` holds `h = k + j` entries equal to `t^h`. The
//! coefficient sequence processes one group at a time:
//!
//! 1. flip passes: every component of modulus `μ` is hit by its own signed
//!    basis atom with `c = μ (1 + 1/t)`, which changes its sign and divides
//!    it by `t`; passes repeat until every modulus lies in `[t/√h, 1/√h]`;
//! 2. saturation: each component `v` gets `c = |v| + 1/√h`, landing on
//!    `∓1/√h`, after which the group carries norm one;
//! 3. zeroing: each component gets `c = 1/√h`.
//!
//! The remainder therefore returns to norm one once per group while the
//! coefficients stay below `2/√h`, and the scripted choices are admissible
//! for the weak rule with parameter `t` (flip steps hit it with equality).

use serde::Serialize;
use thiserror::Error;

use crate::dictionary::{AtomId, Dictionary, Sign};
use crate::greedy::{run, RunOptions, SelectionPolicy, Trace};
use crate::scalar::Scalar;
use crate::sequences::{CoefficientSequence, Schedule, WeakeningSequence};
use crate::vector::{Coord, SparseVector};

/// Slack used when validating the plan's own invariants.
const PLAN_TOL: f64 = 1e-12;
/// Slack on the norm-one events.
pub const MARK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CounterexampleError {
    #[error("weakening parameter {0} must lie strictly between 0 and 1")]
    InvalidT(f64),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("group h = {h}: flip passes left modulus {modulus:e} outside [t/√h, 1/√h]")]
    FlipCount { h: usize, modulus: f64 },
    #[error("group h = {h}: coefficient {c:e} exceeds 2/√h")]
    CoefficientBound { h: usize, c: f64 },
}

fn check_t<S: Scalar>(t: S) -> Result<(), CounterexampleError> {
    if t > S::zero() && t < S::one() {
        Ok(())
    } else {
        Err(CounterexampleError::InvalidT(t.as_f64()))
    }
}

fn admissible_k<S: Scalar>(t: S, k: usize) -> bool {
    let kf = S::lit(k as f64);
    k > 1 && t.powi(k as i32) < kf.sqrt().recip() && kf > t * t / (S::one() - t * t)
}

/// Smallest `k > 1` with `t^k < 1/√k` and `k > t²/(1 - t²)`.
///
/// The second condition makes `t^h < 1/√h` hold for every `h >= k`, so
/// every group starts below the saturation level.
pub fn choose_k<S: Scalar>(t: S) -> Result<usize, CounterexampleError> {
    check_t(t)?;
    (2usize..)
        .find(|&k| admissible_k(t, k))
        .ok_or_else(|| CounterexampleError::ConfigInvalid("no admissible k".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleConfig<S> {
    pub t: S,
    pub k: usize,
    pub num_groups: usize,
}

impl<S: Scalar> CounterexampleConfig<S> {
    /// Configuration with `k` from [`choose_k`].
    pub fn new(t: S, num_groups: usize) -> Result<Self, CounterexampleError> {
        Self::with_k(t, choose_k(t)?, num_groups)
    }

    pub fn with_k(t: S, k: usize, num_groups: usize) -> Result<Self, CounterexampleError> {
        let cfg = Self { t, k, num_groups };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CounterexampleError> {
        check_t(self.t)?;
        if self.num_groups == 0 {
            return Err(CounterexampleError::ConfigInvalid(
                "need at least one group".into(),
            ));
        }
        if !admissible_k(self.t, self.k) {
            return Err(CounterexampleError::ConfigInvalid(format!(
                "k = {} violates k > 1, t^k < 1/√k or k > t²/(1-t²) for t = {}",
                self.k, self.t
            )));
        }
        Ok(())
    }

    /// Group size `h = k + j` of the 0-based group `j`.
    pub fn group_size(&self, j: usize) -> usize {
        self.k + j
    }

    /// First coordinate index of group `j`.
    pub fn group_offset(&self, j: usize) -> u64 {
        (1 + j * self.k + j * j.saturating_sub(1) / 2) as u64
    }

    pub fn support_len(&self) -> usize {
        (0..self.num_groups).map(|j| self.group_size(j)).sum()
    }

    /// Norm of groups `j+1..J` of the target, in closed form.
    pub fn tail_norm(&self, j: usize) -> S {
        ((j + 1)..self.num_groups)
            .map(|jj| {
                let h = self.group_size(jj);
                S::lit(h as f64) * self.t.powi(2 * h as i32)
            })
            .fold(S::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Number of flip passes for a group of size `h`: the `r` with
/// `t^(h-r) ∈ [t/√h, 1/√h]`, taking the smaller one when both endpoints are
/// hit exactly.
pub fn flip_passes<S: Scalar>(t: S, h: usize) -> usize {
    let hf = S::lit(h as f64);
    // t^(h-r) >= t/√h  <=>  h - r - 1 <= ln h / (2 ln(1/t))
    let reach = hf.ln() / (S::lit(2.0) * (-t.ln()));
    let r = (hf - S::one() - reach).ceil();
    let mut r = if r > S::zero() {
        r.to_usize().unwrap_or(0).min(h)
    } else {
        0
    };
    // The logarithms can land on the wrong side of an exact endpoint.
    let lo = t / hf.sqrt() * (S::one() - S::lit(PLAN_TOL));
    let modulus = |r: usize| t.powi((h - r) as i32);
    while r > 0 && modulus(r - 1) >= lo {
        r -= 1;
    }
    while r < h && modulus(r) < lo {
        r += 1;
    }
    r
}

/// Target vector: group `j` occupies `k + j` consecutive coordinates, each
/// equal to `t^(k+j)`.
pub fn build_target<S: Scalar>(cfg: &CounterexampleConfig<S>) -> SparseVector<S> {
    let entries = (0..cfg.num_groups).flat_map(|j| {
        let h = cfg.group_size(j);
        let v = cfg.t.powi(h as i32);
        let start = cfg.group_offset(j);
        (0..h as u64).map(move |i| (Coord::Plain(start + i), v))
    });
    SparseVector::from_entries(entries).expect("group coordinates are distinct")
}

/// Step indices delimiting the phases of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseMark {
    /// 0-based group number `j`.
    pub group: usize,
    /// Group size `h = k + j`.
    pub h: usize,
    pub flip_passes: usize,
    pub first_step: usize,
    /// Last saturation step; the group has norm one afterwards.
    pub subnorm_one_step: usize,
    /// Last zeroing step.
    pub zeroed_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialPlan<S> {
    pub coefficients: CoefficientSequence<S>,
    pub selections: Vec<AtomId>,
    pub phase_marks: Vec<PhaseMark>,
}

impl<S: Scalar> AdversarialPlan<S> {
    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn coefficient_values(&self) -> &[S] {
        match &self.coefficients {
            CoefficientSequence::Explicit(v) => v,
            _ => unreachable!("plans carry explicit coefficients"),
        }
    }

    /// Coefficients used while processing the given group.
    pub fn group_coefficients(&self, mark: &PhaseMark) -> &[S] {
        &self.coefficient_values()[mark.first_step - 1..mark.zeroed_step]
    }
}

/// Builds the coefficient sequence and selection plan for all groups.
///
/// The component values are simulated with the same floating-point
/// operation the engine performs (`v - c * sign`), so the scripted atoms
/// and the flip-pass count are checked against the values the run will
/// actually see.
pub fn build_plan<S: Scalar>(
    cfg: &CounterexampleConfig<S>,
) -> Result<AdversarialPlan<S>, CounterexampleError> {
    cfg.validate()?;
    let t = cfg.t;
    let mut coefficients = Vec::new();
    let mut selections = Vec::new();
    let mut phase_marks = Vec::with_capacity(cfg.num_groups);

    for j in 0..cfg.num_groups {
        let h = cfg.group_size(j);
        let hf = S::lit(h as f64);
        let level = hf.sqrt().recip();
        let offset = cfg.group_offset(j);
        let first_step = coefficients.len() + 1;
        let mut values = vec![t.powi(h as i32); h];

        let mut hit = |values: &mut [S], i: usize, c: S| {
            let v = values[i];
            let sign = Sign::of(v);
            selections.push(AtomId::basis(offset + i as u64, sign));
            coefficients.push(c);
            values[i] = v - c * sign.apply(S::one());
        };

        let passes = flip_passes(t, h);
        let flip = S::one() + t.recip();
        for _ in 0..passes {
            for i in 0..h {
                let c = values[i].abs() * flip;
                hit(&mut values, i, c);
            }
        }
        let slack = S::one() + S::lit(PLAN_TOL);
        for &v in &values {
            let m = v.abs();
            if m * slack < t * level || m > level * slack {
                return Err(CounterexampleError::FlipCount {
                    h,
                    modulus: m.as_f64(),
                });
            }
        }

        for i in 0..h {
            let c = values[i].abs() + level;
            hit(&mut values, i, c);
        }
        let subnorm_one_step = first_step - 1 + (passes + 1) * h;

        for i in 0..h {
            hit(&mut values, i, level);
        }
        let zeroed_step = subnorm_one_step + h;
        debug_assert_eq!(zeroed_step, coefficients.len());

        let bound = S::lit(2.0) * level + S::lit(PLAN_TOL);
        if let Some(&c) = coefficients[first_step - 1..].iter().find(|&&c| c > bound) {
            return Err(CounterexampleError::CoefficientBound { h, c: c.as_f64() });
        }

        phase_marks.push(PhaseMark {
            group: j,
            h,
            flip_passes: passes,
            first_step,
            subnorm_one_step,
            zeroed_step,
        });
    }

    Ok(AdversarialPlan {
        coefficients: CoefficientSequence::Explicit(coefficients),
        selections,
        phase_marks,
    })
}

/// Per-group outcome of an executed plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkReport {
    pub group: usize,
    pub h: usize,
    pub subnorm_one_step: usize,
    pub zeroed_step: usize,
    /// `‖f_m‖` at the end of the saturation phase.
    pub residual_at_mark: f64,
    /// `‖f_m‖` at the end of the zeroing phase.
    pub residual_after_zeroing: f64,
    /// Closed-form norm of the untouched later groups.
    pub tail_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CounterexampleRun<S> {
    pub config: CounterexampleConfig<S>,
    pub target: SparseVector<S>,
    pub plan: AdversarialPlan<S>,
    pub trace: Trace<S>,
    /// Reports for the groups whose zeroing phase finished within the run.
    pub marks: Vec<MarkReport>,
}

impl<S: Scalar> CounterexampleRun<S> {
    /// Whether every completed group returned the remainder to norm one.
    pub fn marks_reach_one(&self) -> bool {
        self.marks
            .iter()
            .all(|m| m.residual_at_mark >= 1.0 - MARK_TOL)
    }
}

/// Executes the plan with the engine over `E±`, constant weakening `t` and
/// scripted selection. Runs are capped at the plan length.
///
/// An inadmissible scripted step shows up as an aborted trace; it would
/// indicate a construction bug, not an expected outcome.
pub fn run_counterexample<S: Scalar>(
    cfg: &CounterexampleConfig<S>,
    max_steps: usize,
) -> Result<CounterexampleRun<S>, CounterexampleError> {
    let plan = build_plan(cfg)?;
    let target = build_target(cfg);
    let schedule = Schedule::new(
        plan.coefficients.clone(),
        WeakeningSequence::Constant(cfg.t),
    );
    let trace = run(
        &target,
        &Dictionary::symmetrized_onb(),
        &schedule,
        &SelectionPolicy::Scripted(plan.selections.clone()),
        RunOptions::steps(max_steps.min(plan.len())),
    );
    let norms = trace.residual_norms();
    let marks = plan
        .phase_marks
        .iter()
        .filter(|m| m.zeroed_step <= norms.len())
        .map(|m| MarkReport {
            group: m.group,
            h: m.h,
            subnorm_one_step: m.subnorm_one_step,
            zeroed_step: m.zeroed_step,
            residual_at_mark: norms[m.subnorm_one_step - 1].as_f64(),
            residual_after_zeroing: norms[m.zeroed_step - 1].as_f64(),
            tail_norm: cfg.tail_norm(m.group).as_f64(),
        })
        .collect();
    Ok(CounterexampleRun {
        config: *cfg,
        target,
        plan,
        trace,
        marks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greedy::Status;

    /// Independent scan straight from the two defining inequalities.
    fn scan_k(t: f64) -> usize {
        let mut k = 2usize;
        loop {
            let lhs = t.powf(k as f64);
            if lhs < 1.0 / (k as f64).sqrt() && (k as f64) * (1.0 - t * t) > t * t {
                return k;
            }
            k += 1;
        }
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(0.5), Ok(2));
        assert_eq!(choose_k(0.9), Ok(12));
        assert_eq!(choose_k(0.1), Ok(2));
        for t in [0.05, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99] {
            assert_eq!(choose_k(t).unwrap(), scan_k(t), "t = {t}");
        }
        assert!(matches!(
            choose_k(1.0),
            Err(CounterexampleError::InvalidT(_))
        ));
        assert!(matches!(
            choose_k(0.0),
            Err(CounterexampleError::InvalidT(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(CounterexampleConfig::with_k(0.5, 1, 3).is_err());
        assert!(CounterexampleConfig::with_k(0.9, 11, 3).is_err());
        assert!(CounterexampleConfig::with_k(0.9, 12, 3).is_ok());
        assert!(CounterexampleConfig::with_k(0.5, 2, 0).is_err());
    }

    #[test]
    fn target_examples() {
        let cfg = CounterexampleConfig::with_k(0.5, 2, 1).unwrap();
        let f = build_target(&cfg);
        assert_eq!(
            f,
            SparseVector::from_pairs(&[(1, 0.25), (2, 0.25)]).unwrap()
        );
        assert_eq!(f.norm_sq(), 0.125);

        let cfg = CounterexampleConfig::with_k(0.5, 2, 2).unwrap();
        let f = build_target(&cfg);
        assert_eq!(
            f,
            SparseVector::from_pairs(&[(1, 0.25), (2, 0.25), (3, 0.125), (4, 0.125), (5, 0.125)])
                .unwrap()
        );
        let cfg = CounterexampleConfig::with_k(0.5, 2, 4).unwrap();
        assert_eq!(cfg.group_offset(3), 1 + 2 + 3 + 4);
        assert_eq!(build_target(&cfg).support_len(), cfg.support_len());
    }

    #[test]
    fn flip_passes_match_scan() {
        for t in [0.1, 0.5, 0.7, 0.9] {
            let k = choose_k(t).unwrap();
            for h in k..k + 30 {
                let lo = t / (h as f64).sqrt();
                let hi = 1.0 / (h as f64).sqrt();
                let scanned = (0..=h).find(|&r| {
                    let m = t.powi((h - r) as i32);
                    m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12)
                });
                assert_eq!(Some(flip_passes(t, h)), scanned, "t = {t}, h = {h}");
            }
        }
    }

    #[test]
    fn first_group_plan_for_half() {
        let cfg = CounterexampleConfig::with_k(0.5, 2, 1).unwrap();
        let plan = build_plan(&cfg).unwrap();
        let c = plan.coefficient_values();
        // flips 0.25 -> -0.5 with c = 0.25 (1 + 2)
        assert_eq!(&c[..2], &[0.75, 0.75]);
        let a = 1.0 / 2f64.sqrt();
        assert_eq!(&c[2..4], &[0.5 + a, 0.5 + a]);
        assert_eq!(&c[4..], &[a, a]);
        let ids: Vec<String> = plan.selections.iter().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["+e1", "+e2", "-e1", "-e2", "+e1", "+e2"]);
        assert_eq!(
            plan.phase_marks[0],
            PhaseMark {
                group: 0,
                h: 2,
                flip_passes: 1,
                first_step: 1,
                subnorm_one_step: 4,
                zeroed_step: 6
            }
        );
    }

    #[test]
    fn plan_coefficients_respect_envelope() {
        for t in [0.3, 0.5, 0.9] {
            let cfg = CounterexampleConfig::new(t, 5).unwrap();
            let plan = build_plan(&cfg).unwrap();
            for mark in &plan.phase_marks {
                let level = 1.0 / (mark.h as f64).sqrt();
                let cs = plan.group_coefficients(mark);
                assert!(cs.iter().all(|&c| c > 0.0 && c <= 2.0 * level + 1e-12));
                assert!(cs.contains(&level));
            }
        }
    }

    #[test]
    fn half_run_goes_back_to_norm_one() {
        let cfg = CounterexampleConfig::new(0.5, 4).unwrap();
        let out = run_counterexample(&cfg, usize::MAX).unwrap();
        assert!(
            !matches!(out.trace.status, Status::Aborted { .. }),
            "{:?}",
            out.trace.status
        );
        assert_eq!(out.marks.len(), 4);
        assert!(out.marks_reach_one());
        for m in &out.marks {
            assert!((m.residual_after_zeroing - m.tail_norm).abs() <= 1e-9);
        }
    }

    #[test]
    fn group_subnorm_is_one_at_saturation() {
        let cfg = CounterexampleConfig::new(0.5f64, 4).unwrap();
        let plan = build_plan(&cfg).unwrap();
        for mark in &plan.phase_marks {
            let out = run_counterexample(&cfg, mark.subnorm_one_step).unwrap();
            let rem = out.trace.remainder.unwrap();
            let start = cfg.group_offset(mark.group);
            let sub: f64 = (start..start + mark.h as u64)
                .map(|i| rem.get(Coord::Plain(i)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((sub - 1.0).abs() <= 1e-9, "group {}: {sub}", mark.group);
        }
    }

    #[test]
    fn truncated_run_reports_completed_groups_only() {
        let cfg = CounterexampleConfig::new(0.5, 3).unwrap();
        let plan = build_plan(&cfg).unwrap();
        let cut = plan.phase_marks[1].zeroed_step;
        let out = run_counterexample(&cfg, cut + 1).unwrap();
        assert_eq!(out.trace.len(), cut + 1);
        assert_eq!(out.marks.len(), 2);
    }

    #[test]
    fn slow_weakening_run_is_admissible() {
        let cfg = CounterexampleConfig::new(0.9, 3).unwrap();
        assert_eq!(cfg.k, 12);
        let out = run_counterexample(&cfg, usize::MAX).unwrap();
        assert!(
            !matches!(out.trace.status, Status::Aborted { .. }),
            "{:?}",
            out.trace.status
        );
        assert!(out.marks_reach_one());
    }
}
