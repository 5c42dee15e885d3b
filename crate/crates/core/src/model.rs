//! Probabilistic trainer feedback model.
//!
//! A trainer who prefers action `lam` in some state answers action `a` with
//! positive, negative or no feedback. Both feedback probabilities factor into
//! a magnitude (`mu_plus`, `mu_minus`) and a unit-interval decay term `ê`
//! that depends only on the distance `|a - lam|`:
//!
//! ```text
//! p+ = mu_plus  * ê
//! p- = mu_minus * (1 - (1 - eps) * ê)
//! p0 = 1 - p+ - p-
//! ```
//!
//! The Gaussian kernel `ê = exp(-(a - lam)^2 / (2 sigma^2))` is the one the
//! learner uses. The indicator kernel reproduces the "positive only at the
//! optimal action, fixed error rate" trainer assumed by the ISABL baseline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every probability before taking its logarithm.
pub const P_FLOOR: f64 = 1e-12;

/// Default `epsilon`, the residual negative-feedback weight at the preferred action.
pub const DEFAULT_EPSILON: f64 = 0.01;

const TOL: f64 = 1e-12;

/// `ln(max(p, P_FLOOR))`.
#[inline]
pub fn floored_ln(p: f64) -> f64 {
    p.max(P_FLOOR).ln()
}

/// One trainer response. "No feedback" is an observation in its own right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackKind {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
    #[serde(rename = "0")]
    None,
}

impl FeedbackKind {
    pub const ALL: [FeedbackKind; 3] = [
        FeedbackKind::Positive,
        FeedbackKind::Negative,
        FeedbackKind::None,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            FeedbackKind::Positive => "+",
            FeedbackKind::Negative => "-",
            FeedbackKind::None => "0",
        }
    }

    /// Reward used by the UCB baseline: `[+, -, 0] -> [1, -1, 0]`.
    pub fn reward(self) -> f64 {
        match self {
            FeedbackKind::Positive => 1.0,
            FeedbackKind::Negative => -1.0,
            FeedbackKind::None => 0.0,
        }
    }
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl std::str::FromStr for FeedbackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" => Ok(FeedbackKind::Positive),
            "-" => Ok(FeedbackKind::Negative),
            "0" => Ok(FeedbackKind::None),
            other => Err(Error::Protocol(format!(
                "unknown feedback {other:?}, expected \"+\", \"-\" or \"0\""
            ))),
        }
    }
}

/// Position of an action on the 1-D action grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ActionIndex(pub usize);

impl ActionIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Grid distance `|a - b|`.
    #[inline]
    pub fn distance(self, other: ActionIndex) -> usize {
        self.0.abs_diff(other.0)
    }

    pub fn checked(index: usize, n_actions: usize) -> Result<Self> {
        if index < n_actions {
            Ok(ActionIndex(index))
        } else {
            Err(Error::OutOfBounds {
                what: "action",
                index,
                bound: n_actions,
            })
        }
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    pub fn checked(index: usize, n_states: usize) -> Result<Self> {
        if index < n_states {
            Ok(StateId(index))
        } else {
            Err(Error::OutOfBounds {
                what: "state",
                index,
                bound: n_states,
            })
        }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Shape of the decay term `ê`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    /// `1 - error_rate` at the preferred action, `error_rate` everywhere else.
    IsablIndicator { error_rate: f64 },
}

impl KernelKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelKind::Gaussian => Ok(()),
            KernelKind::IsablIndicator { error_rate } => {
                if error_rate > 0.0 && error_rate < 0.5 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(vec![format!(
                        "error_rate must lie in (0, 0.5), got {error_rate}"
                    )]))
                }
            }
        }
    }

    /// `ê` as a function of grid distance. `sigma` is ignored by the indicator kernel.
    #[inline]
    pub fn value_at_distance(&self, distance: usize, sigma: f64) -> f64 {
        match *self {
            KernelKind::Gaussian => {
                let d = distance as f64;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            }
            KernelKind::IsablIndicator { error_rate } => {
                if distance == 0 {
                    1.0 - error_rate
                } else {
                    error_rate
                }
            }
        }
    }

    /// Shape of the negative-feedback term given `ê`: `1 - (1 - eps) ê` for the
    /// Gaussian model, `1 - ê` for the indicator model.
    #[inline]
    pub fn negative_factor(&self, e: f64, epsilon: f64) -> f64 {
        match self {
            KernelKind::Gaussian => 1.0 - (1.0 - epsilon) * e,
            KernelKind::IsablIndicator { .. } => 1.0 - e,
        }
    }
}

/// Kernel value `ê(a, lam)`.
pub fn kernel(a: ActionIndex, lam: ActionIndex, kind: &KernelKind, sigma: f64) -> f64 {
    kind.value_at_distance(a.distance(lam), sigma)
}

/// Parameters of one trainer's feedback model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackModelParams {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub sigma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl FeedbackModelParams {
    pub fn new(mu_plus: f64, mu_minus: f64, sigma: f64, epsilon: f64) -> Self {
        Self {
            mu_plus,
            mu_minus,
            sigma,
            epsilon,
        }
    }
}

/// A violated inequality of [`FeedbackModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    MuPlusNegative,
    MuPlusAboveOneMinusEpsilon,
    MuMinusNegative,
    MuMinusAboveOne,
    SumAboveOne,
    SigmaNotPositive,
    EpsilonOutOfRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::MuPlusNegative => "mu_plus >= 0",
            Violation::MuPlusAboveOneMinusEpsilon => "mu_plus <= 1 - epsilon",
            Violation::MuMinusNegative => "mu_minus >= 0",
            Violation::MuMinusAboveOne => "mu_minus <= 1",
            Violation::SumAboveOne => "mu_plus + epsilon * mu_minus <= 1",
            Violation::SigmaNotPositive => "sigma > 0",
            Violation::EpsilonOutOfRange => "epsilon in (0, 0.1]",
        })
    }
}

/// Every inequality `params` violates; empty when the parameters are valid.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_params(params: &FeedbackModelParams) -> Vec<Violation> {
    let FeedbackModelParams {
        mu_plus,
        mu_minus,
        sigma,
        epsilon,
    } = *params;
    let mut out = Vec::new();
    // NaN fails every comparison below and is reported accordingly.
    if !(mu_plus >= 0.0) {
        out.push(Violation::MuPlusNegative);
    }
    if !(mu_plus <= 1.0 - epsilon + TOL) {
        out.push(Violation::MuPlusAboveOneMinusEpsilon);
    }
    if !(mu_minus >= 0.0) {
        out.push(Violation::MuMinusNegative);
    }
    if !(mu_minus <= 1.0) {
        out.push(Violation::MuMinusAboveOne);
    }
    if !(mu_plus + epsilon * mu_minus <= 1.0 + TOL) {
        out.push(Violation::SumAboveOne);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        out.push(Violation::SigmaNotPositive);
    }
    if !(epsilon > 0.0 && epsilon <= 0.1) {
        out.push(Violation::EpsilonOutOfRange);
    }
    out
}

/// Probabilities of `(+, -, 0)` for one action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbTriple {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_none: f64,
}

impl ProbTriple {
    pub fn get(&self, f: FeedbackKind) -> f64 {
        match f {
            FeedbackKind::Positive => self.p_plus,
            FeedbackKind::Negative => self.p_minus,
            FeedbackKind::None => self.p_none,
        }
    }
}

/// Feedback probabilities without parameter validation. `e` is the kernel value.
#[inline]
pub(crate) fn probs_from_kernel(
    e: f64,
    mu_plus: f64,
    mu_minus: f64,
    epsilon: f64,
    kind: &KernelKind,
) -> ProbTriple {
    let p_plus = mu_plus * e;
    let p_minus = mu_minus * kind.negative_factor(e, epsilon);
    // Rounding can leave the complement a few ulps below zero at the constraint boundary.
    let p_none = (1.0 - p_plus - p_minus).clamp(0.0, 1.0);
    ProbTriple {
        p_plus,
        p_minus,
        p_none,
    }
}

/// Distribution over trainer responses to action `a` when the preferred action is `lam`.
pub fn feedback_probs(
    a: ActionIndex,
    lam: ActionIndex,
    params: &FeedbackModelParams,
    kind: &KernelKind,
) -> Result<ProbTriple> {
    let violations = validate_params(params);
    if !violations.is_empty() {
        return Err(Error::Constraint(violations));
    }
    kind.validate()?;
    let e = kernel(a, lam, kind, params.sigma);
    Ok(probs_from_kernel(
        e,
        params.mu_plus,
        params.mu_minus,
        params.epsilon,
        kind,
    ))
}
