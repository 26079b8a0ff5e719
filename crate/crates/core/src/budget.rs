// SPDX-License-Identifier: Apache-2.0

//! Privacy budgets and composition accounting.
//!
//! The composition calculators are used two ways: to derive per-instance
//! budgets when a protocol splits its total budget across many sub-instances
//! (see [`split_evenly`]), and to assert in tests that every shipped split
//! recomposes to no more than the configured total.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A differential-privacy budget (epsilon, delta) together with the failure
/// probability beta used by accuracy statements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Accuracy failure probability. Composition results carry beta = 1,
    /// meaning "no accuracy claim".
    pub beta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
        }
        Ok(PrivacyBudget { epsilon, delta, beta })
    }

    /// True when this budget is no looser than `other` in every component.
    pub fn within(&self, other: &PrivacyBudget) -> bool {
        self.epsilon <= other.epsilon && self.delta <= other.delta
    }
}

/// Total budget consumed by running `k` adaptively chosen mechanisms, each
/// (step_epsilon, step_delta)-DP, with slack `slack_delta` spent on the
/// high-probability argument:
///
///   epsilon' = step_epsilon * sqrt(2k ln(1/slack_delta))
///            + k * step_epsilon * (e^step_epsilon - 1)
///   delta'   = k * step_delta + slack_delta
pub fn advanced_composition(step_epsilon: f64, step_delta: f64, k: u32, slack_delta: f64) -> Result<PrivacyBudget> {
    if step_epsilon < 0.0 || step_delta < 0.0 {
        return Err(Error::invalid("step budget components must be non-negative"));
    }
    if k == 0 {
        return Err(Error::invalid("composition length k must be at least 1"));
    }
    if !(slack_delta > 0.0 && slack_delta < 1.0) {
        return Err(Error::invalid(format!("slack delta must lie in (0, 1), got {slack_delta}")));
    }
    let k_f = f64::from(k);
    let epsilon = step_epsilon * (2.0 * k_f * (1.0 / slack_delta).ln()).sqrt()
        + k_f * step_epsilon * (step_epsilon.exp() - 1.0);
    let delta = k_f * step_delta + slack_delta;
    Ok(PrivacyBudget { epsilon, delta, beta: 1.0 })
}

/// Total budget of running `k` mechanisms sequentially: components add.
pub fn basic_composition(steps: &[PrivacyBudget]) -> PrivacyBudget {
    let epsilon = steps.iter().map(|b| b.epsilon).sum();
    let delta = steps.iter().map(|b| b.delta).sum();
    PrivacyBudget { epsilon, delta, beta: 1.0 }
}

/// Total budget of mechanisms operating on disjoint slices of the input:
/// the worst single component dominates.
pub fn parallel_composition(steps: &[PrivacyBudget]) -> PrivacyBudget {
    let epsilon = steps.iter().map(|b| b.epsilon).fold(0.0f64, f64::max);
    let delta = steps.iter().map(|b| b.delta).fold(0.0f64, f64::max);
    PrivacyBudget { epsilon, delta, beta: 1.0 }
}

/// Largest per-step budget such that `k` steps advanced-compose to at most
/// `total`. The step delta is fixed at total.delta / (2k) and the slack at
/// total.delta / 2, so k * step_delta + slack = total.delta exactly; the
/// step epsilon is found by bisection to relative tolerance 1e-9.
pub fn split_evenly(total: &PrivacyBudget, k: u32) -> Result<PrivacyBudget> {
    if k == 0 {
        return Err(Error::invalid("cannot split a budget across zero steps"));
    }
    let step_delta = total.delta / (2.0 * f64::from(k));
    let slack = total.delta / 2.0;
    let composed_eps = |step_eps: f64| -> f64 {
        advanced_composition(step_eps, step_delta, k, slack)
            .expect("bisection operates on valid arguments")
            .epsilon
    };

    // epsilon' grows strictly in step_epsilon and composed(total.epsilon)
    // >= total.epsilon for every k >= 1, so the root lies in [0, total.epsilon].
    let mut lo = 0.0f64;
    let mut hi = total.epsilon;
    debug_assert!(composed_eps(hi) >= total.epsilon);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if composed_eps(mid) <= total.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-9 * hi {
            break;
        }
    }
    // lo is the largest tested value that still composes within the total.
    Ok(PrivacyBudget { epsilon: lo, delta: step_delta, beta: total.beta })
}
