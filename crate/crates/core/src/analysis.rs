//! Post-hoc checks on recorded traces.
//!
//! Every check is a pure function of the trace. Reports always carry the
//! worst violation seen, also when the check passes.

use serde::Serialize;
use thiserror::Error;

use crate::dictionary::CoherenceEstimate;
use crate::greedy::Trace;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("descent window is empty: {0}")]
    PreconditionUnmet(String),
    #[error("burn-in {burn_in} is not shorter than the trace ({len} steps)")]
    BurnInTooLong { burn_in: usize, len: usize },
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst violation magnitude (0 when every step is within bounds).
    pub worst_violation: f64,
    /// Step attaining the worst violation.
    pub step: Option<usize>,
    /// First failing step, if any.
    pub first_failure: Option<usize>,
    pub applicable: usize,
    pub not_applicable: usize,
    pub hard: bool,
    pub note: Option<String>,
}

impl CheckResult {
    fn new(name: &str, hard: bool) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            worst_violation: 0.0,
            step: None,
            first_failure: None,
            applicable: 0,
            not_applicable: 0,
            hard,
            note: None,
        }
    }

    /// Records a nonnegative violation for step `m` against tolerance `tol`.
    fn observe(&mut self, m: usize, violation: f64, tol: f64) {
        self.applicable += 1;
        if self.step.is_none() || violation > self.worst_violation {
            self.worst_violation = violation;
            self.step = Some(m);
        }
        // NaN violations count as failures.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(violation <= tol) {
            self.passed = false;
            self.first_failure.get_or_insert(m);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    pub hard_passed: bool,
}

impl VerificationReport {
    fn single(check: CheckResult) -> Self {
        let mut r = Self::default();
        r.push(check);
        r
    }

    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
        self.all_passed = self.checks.iter().all(|c| c.passed);
        self.hard_passed = self.checks.iter().all(|c| c.passed || !c.hard);
    }

    pub fn merge(mut self, other: VerificationReport) -> Self {
        for c in other.checks {
            self.push(c);
        }
        self
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const ENERGY_IDENTITY: &str = "energy_identity";
pub const GREEDY_CONDITION: &str = "greedy_condition";
pub const DESCENT_INEQUALITY: &str = "descent_inequality";
pub const BLOCK_PARTITION: &str = "block_partition";

/// Checks `‖f_m‖² = ‖f_{m-1}‖² - 2 c_m <f_{m-1}, φ_m> + c_m²` at every step.
///
/// The violation is relative to `‖f_{m-1}‖² + 2 c_m |ip| + c_m²`, the scale
/// of the terms being cancelled. Step 1 is skipped when the trace carries no
/// initial norm.
pub fn verify_energy_identity<S: Scalar>(trace: &Trace<S>, tol: f64) -> VerificationReport {
    let mut check = CheckResult::new(ENERGY_IDENTITY, true);
    for s in &trace.steps {
        let Some(prev) = trace.norm_before(s.m) else {
            check.not_applicable += 1;
            continue;
        };
        let (prev, c, ip, now) = (
            prev.as_f64(),
            s.c.as_f64(),
            s.ip.as_f64(),
            s.residual_norm.as_f64(),
        );
        let prev_sq = prev * prev;
        let expected = prev_sq - 2.0 * c * ip + c * c;
        let scale = prev_sq + 2.0 * c * ip.abs() + c * c;
        let diff = (now * now - expected).abs();
        let violation = if scale > 0.0 { diff / scale } else { diff };
        check.observe(s.m, violation, tol);
    }
    if trace.initial_norm.is_none() && !trace.is_empty() {
        check.note = Some("no initial norm; step 1 not checked".into());
    }
    VerificationReport::single(check)
}

/// Checks `ip >= t * sup - tol` at every step.
pub fn verify_greedy_condition<S: Scalar>(trace: &Trace<S>, tol: f64) -> VerificationReport {
    let mut check = CheckResult::new(GREEDY_CONDITION, true);
    for s in &trace.steps {
        let violation = (s.t * s.sup - s.ip).as_f64().max(0.0);
        check.observe(s.m, violation, tol);
    }
    VerificationReport::single(check)
}

/// First step `N <= horizon` after which `c_n / t_n < ε` and `c_n < ε / c`
/// hold on every recorded step.
pub fn descent_window_start<S: Scalar>(trace: &Trace<S>, coherence: S, eps: S) -> Option<usize> {
    let ok = |s: &crate::greedy::StepRecord<S>| s.c / s.t < eps && s.c < eps / coherence;
    let last_bad = trace.steps.iter().rposition(|s| !ok(s));
    let start = last_bad.map_or(1, |k| k + 2);
    (start <= trace.len()).then_some(start)
}

/// Checks `‖f_m‖² <= ‖f_{m-1}‖² - c_m t_m ε` on steps `m >= from_step`
/// whose previous remainder satisfies `‖f_{m-1}‖ >= ε / c`.
///
/// Steps with a smaller remainder are counted as not applicable. With a
/// sampled `c` (an upper bound on the true constant) the check is advisory:
/// the resulting report marks it as soft unless `c` is exact.
pub fn verify_descent_inequality<S: Scalar>(
    trace: &Trace<S>,
    coherence: &CoherenceEstimate<S>,
    eps: S,
    from_step: usize,
    tol: f64,
) -> Result<VerificationReport, AnalysisError> {
    let c_est = coherence.value;
    if from_step == 0 || from_step > trace.len() {
        return Err(AnalysisError::PreconditionUnmet(format!(
            "from_step {from_step} outside the {} recorded steps",
            trace.len()
        )));
    }
    let window = &trace.steps[from_step - 1..];
    if let Some(s) = window
        .iter()
        .find(|s| !(s.c / s.t < eps && s.c < eps / c_est))
    {
        return Err(AnalysisError::PreconditionUnmet(format!(
            "step {} has c/t = {} and c = {} (need < {} and < {})",
            s.m,
            s.c / s.t,
            s.c,
            eps,
            eps / c_est
        )));
    }
    let exact = coherence.samples == 0;
    let mut check = CheckResult::new(DESCENT_INEQUALITY, exact);
    let threshold = eps / c_est;
    for s in window {
        let Some(prev) = trace.norm_before(s.m) else {
            check.not_applicable += 1;
            continue;
        };
        if prev < threshold {
            check.not_applicable += 1;
            continue;
        }
        let bound = prev * prev - s.c * s.t * eps;
        let violation = (s.residual_norm * s.residual_norm - bound)
            .as_f64()
            .max(0.0);
        check.observe(s.m, violation, tol);
    }
    if check.applicable == 0 {
        check.note = Some("no applicable steps (vacuous pass)".into());
    } else if !exact {
        check.note = Some("sampled coherence constant; advisory".into());
    }
    Ok(VerificationReport::single(check))
}

/// Checks that the block labels of a direct-sum trace partition the step
/// indices. Traces without block labels are reported as not applicable.
pub fn verify_block_partition<S: Scalar>(trace: &Trace<S>) -> VerificationReport {
    let mut check = CheckResult::new(BLOCK_PARTITION, true);
    match trace.block_partition() {
        None => {
            check.not_applicable = trace.len();
            check.note = Some("trace carries no block attribution".into());
        }
        Some(parts) => {
            let mut seen = vec![0u32; trace.len()];
            for idx in parts.values().flatten() {
                if let Some(slot) = idx.checked_sub(1).and_then(|i| seen.get_mut(i)) {
                    *slot += 1;
                }
            }
            for (i, &hits) in seen.iter().enumerate() {
                check.observe(i + 1, (hits as f64 - 1.0).abs(), 0.0);
            }
        }
    }
    VerificationReport::single(check)
}

/// Prefix minima and maxima of `‖f_m‖` for steps after `burn_in`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualExtrema {
    pub burn_in: usize,
    pub horizon: usize,
    pub running_min: Vec<f64>,
    pub running_max: Vec<f64>,
}

pub fn residual_extrema<S: Scalar>(
    trace: &Trace<S>,
    burn_in: usize,
) -> Result<ResidualExtrema, AnalysisError> {
    if burn_in >= trace.len() {
        return Err(AnalysisError::BurnInTooLong {
            burn_in,
            len: trace.len(),
        });
    }
    let tail = trace.steps[burn_in..]
        .iter()
        .map(|s| s.residual_norm.as_f64());
    let mut running_min = Vec::with_capacity(trace.len() - burn_in);
    let mut running_max = Vec::with_capacity(trace.len() - burn_in);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in tail {
        lo = lo.min(r);
        hi = hi.max(r);
        running_min.push(lo);
        running_max.push(hi);
    }
    Ok(ResidualExtrema {
        burn_in,
        horizon: trace.len(),
        running_min,
        running_max,
    })
}
