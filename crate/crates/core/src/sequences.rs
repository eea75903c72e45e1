//! Prescribed coefficient sequences `c_n` and weakening sequences `t_n`.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("sequences are indexed from 1")]
    ZeroIndex,
    #[error("explicit sequence of length {len} has no term {n}")]
    IndexPastEnd { n: usize, len: usize },
    #[error("invalid sequence parameter: {0}")]
    InvalidParameter(String),
}

/// Positive coefficient sequence `C = {c_n}`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSequence<S> {
    /// `scale / n`
    Harmonic {
        scale: S,
    },
    /// `scale * n^(-alpha)`
    Power {
        alpha: S,
        scale: S,
    },
    Explicit(Vec<S>),
}

/// Weakening sequence `τ = {t_n}` with `0 < t_n <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeakeningSequence<S> {
    Constant(S),
    Explicit(Vec<S>),
}

fn explicit_term<S: Scalar>(values: &[S], n: usize) -> Result<S, SequenceError> {
    if n == 0 {
        return Err(SequenceError::ZeroIndex);
    }
    values
        .get(n - 1)
        .copied()
        .ok_or(SequenceError::IndexPastEnd {
            n,
            len: values.len(),
        })
}

impl<S: Scalar> CoefficientSequence<S> {
    pub fn harmonic() -> Self {
        Self::Harmonic { scale: S::one() }
    }

    pub fn power(alpha: S) -> Self {
        Self::Power {
            alpha,
            scale: S::one(),
        }
    }

    /// Checks `c_n > 0` for the parametric families and every explicit term.
    pub fn validate(&self) -> Result<(), SequenceError> {
        let bad = |what: String| Err(SequenceError::InvalidParameter(what));
        match self {
            Self::Harmonic { scale } if !(*scale > S::zero() && scale.is_finite()) => {
                bad(format!("harmonic scale {scale} must be positive"))
            }
            Self::Power { alpha, scale } if !(*alpha > S::zero() && *scale > S::zero()) => bad(
                format!("power alpha {alpha} and scale {scale} must be positive"),
            ),
            Self::Explicit(v) => match v.iter().position(|c| !(*c > S::zero() && c.is_finite())) {
                Some(k) => bad(format!("coefficient {} = {} is not positive", k + 1, v[k])),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn eval(&self, n: usize) -> Result<S, SequenceError> {
        if n == 0 {
            return Err(SequenceError::ZeroIndex);
        }
        match self {
            Self::Harmonic { scale } => Ok(*scale / S::lit(n as f64)),
            Self::Power { alpha, scale } => Ok(*scale * S::lit(n as f64).powf(-*alpha)),
            Self::Explicit(v) => explicit_term(v, n),
        }
    }

    /// Number of available terms; `None` for infinite families.
    pub fn term_count(&self) -> Option<usize> {
        match self {
            Self::Explicit(v) => Some(v.len()),
            _ => None,
        }
    }
}

impl<S: Scalar> WeakeningSequence<S> {
    pub fn validate(&self) -> Result<(), SequenceError> {
        let ok = |t: &S| *t > S::zero() && *t <= S::one();
        match self {
            Self::Constant(t) if !ok(t) => Err(SequenceError::InvalidParameter(format!(
                "weakening parameter {t} outside (0, 1]"
            ))),
            Self::Explicit(v) => match v.iter().position(|t| !ok(t)) {
                Some(k) => Err(SequenceError::InvalidParameter(format!(
                    "weakening term {} = {} outside (0, 1]",
                    k + 1,
                    v[k]
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn eval(&self, n: usize) -> Result<S, SequenceError> {
        match self {
            Self::Constant(t) if n >= 1 => Ok(*t),
            Self::Constant(_) => Err(SequenceError::ZeroIndex),
            Self::Explicit(v) => explicit_term(v, n),
        }
    }
}

/// A coefficient sequence paired with a weakening sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<S> {
    pub coefficients: CoefficientSequence<S>,
    pub weakening: WeakeningSequence<S>,
}

impl<S: Scalar> Schedule<S> {
    pub fn new(coefficients: CoefficientSequence<S>, weakening: WeakeningSequence<S>) -> Self {
        Self {
            coefficients,
            weakening,
        }
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        self.coefficients.validate()?;
        self.weakening.validate()
    }
}

/// Tri-state outcome of a finite-prefix heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Yes,
    No,
    Indeterminate,
}

impl From<bool> for Flag {
    fn from(b: bool) -> Self {
        if b {
            Flag::Yes
        } else {
            Flag::No
        }
    }
}

/// Finite-horizon diagnostics for `∑ c_n t_n = ∞` and `c_n / t_n → 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub horizon: usize,
    /// `∑_{n <= horizon} c_n t_n`
    pub partial_sum: f64,
    /// Partial sums at horizon, horizon/2, horizon/4, ... (largest first).
    pub checkpoints: Vec<(usize, f64)>,
    /// `max c_n / t_n` over the last tenth of the horizon.
    pub tail_ratio_max: f64,
    /// Same quantity over the last tenth of the first half of the horizon.
    pub half_tail_ratio_max: f64,
    pub divergence_plausible: Flag,
    pub ratio_vanishing: Flag,
    pub note: &'static str,
}

/// Below this horizon both flags are reported as indeterminate.
pub const MIN_DIAGNOSTIC_HORIZON: usize = 16;

/// Increment ratio between consecutive doubling checkpoints above which the
/// partial sums are deemed to grow without apparent bound.
const DIVERGENCE_INCREMENT_RATIO: f64 = 0.95;

const CONDITION_NOTE: &str =
    "heuristic finite-prefix diagnostics; the conditions are asymptotic and \
     cannot be decided from a finite prefix";

/// Computes partial sums and tail ratios of `(c_n, t_n)` up to `horizon`.
///
/// `divergence_plausible` compares the increments of the partial sum over the
/// last two doubling windows; `ratio_vanishing` compares the tail maximum of
/// `c_n / t_n` with the corresponding maximum at half the horizon.
pub fn check_conditions<S: Scalar>(
    coefficients: &CoefficientSequence<S>,
    weakening: &WeakeningSequence<S>,
    horizon: usize,
) -> Result<ConditionReport, SequenceError> {
    if horizon == 0 {
        return Err(SequenceError::InvalidParameter(
            "horizon must be positive".into(),
        ));
    }
    let mut prefix = Vec::with_capacity(horizon + 1);
    let mut ratios = Vec::with_capacity(horizon);
    prefix.push(0.0f64);
    let mut sum = 0.0f64;
    for n in 1..=horizon {
        let c = coefficients.eval(n)?.as_f64();
        let t = weakening.eval(n)?.as_f64();
        sum += c * t;
        prefix.push(sum);
        ratios.push(c / t);
    }

    let mut checkpoints = Vec::new();
    let mut n = horizon;
    while n >= 1 {
        checkpoints.push((n, prefix[n]));
        n /= 2;
    }

    // Maximum of c_n/t_n over n in (0.9 h, h].
    let tail_max = |h: usize| {
        let start = (h * 9) / 10;
        ratios[start..h]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let tail_ratio_max = tail_max(horizon);
    let half_tail_ratio_max = tail_max((horizon / 2).max(1));

    let (divergence_plausible, ratio_vanishing) = if horizon < MIN_DIAGNOSTIC_HORIZON {
        (Flag::Indeterminate, Flag::Indeterminate)
    } else {
        let (h, h2, h4) = (horizon, horizon / 2, horizon / 4);
        let recent = prefix[h] - prefix[h2];
        let earlier = prefix[h2] - prefix[h4];
        let diverging = recent >= DIVERGENCE_INCREMENT_RATIO * earlier;
        (
            Flag::from(diverging),
            Flag::from(tail_ratio_max < half_tail_ratio_max),
        )
    };

    Ok(ConditionReport {
        horizon,
        partial_sum: sum,
        checkpoints,
        tail_ratio_max,
        half_tail_ratio_max,
        divergence_plausible,
        ratio_vanishing,
        note: CONDITION_NOTE,
    })
}
