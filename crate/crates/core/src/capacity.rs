//! Membership tests for the second-order capacity region.
//!
//! The outer bound is necessary for any scheduling policy; the inner bound
//! tightens every proper-subset rate constraint by a margin `delta` and is
//! sufficient for the variance-weighted-deficit policy.

use serde::{Deserialize, Serialize};

use crate::channel::{full_mask, Mask, SecondOrderStats};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest client count for exhaustive subset enumeration.
pub const MAX_ENUMERATED_CLIENTS: usize = 25;

/// Tolerance of the total-rate equality and the variance budget for analytic points.
pub const ANALYTIC_TOL: f64 = 1e-9;

/// Slacks closer than this are ties, resolved by lowest mask.
const TIE_EPS: f64 = 1e-12;

/// Target delivery model: per-client long-run rate and temporal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint<T> {
    pub mu: Vec<T>,
    pub sigma2: Vec<T>,
}

impl<T: Scalar> OperatingPoint<T> {
    pub fn new(mu: Vec<T>, sigma2: Vec<T>) -> Result<Self> {
        if mu.len() != sigma2.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), found: sigma2.len() });
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn total_rate(&self) -> T {
        self.mu.iter().copied().sum()
    }

    /// Sum of per-client standard deviations.
    pub fn total_sd(&self) -> T {
        self.sigma2.iter().map(|s| s.max(T::zero()).sqrt()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Rates of a subset fit inside that subset's ON fraction.
    SubsetRate,
    /// Total rate equals the full-set ON fraction.
    TotalRate,
    /// Standard deviations cover the full-set temporal standard deviation.
    VarianceBudget,
    NonNegativeRate,
    PositiveVariance,
}

/// One failed constraint. `slack` is bound minus value and is negative when
/// the constraint is violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// Subset mask for [`Constraint::SubsetRate`], client index bit for per-client constraints.
    pub subset: Option<Mask>,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self { feasible: violations.is_empty(), violations }
    }
}

/// Visits every non-empty subset in Gray-code order with its m_S and sum of rates.
///
/// The product of OFF probabilities and the rate sum are updated with one
/// multiply/divide and one add per subset; both are recomputed exactly every
/// few hundred steps to bound rounding drift.
pub(crate) fn for_each_subset<T: Scalar>(off: &[T], mu: &[T], mut visit: impl FnMut(Mask, T, T)) {
    let n = off.len();
    debug_assert!(n <= MAX_ENUMERATED_CLIENTS && mu.len() == n);
    let mut mask: Mask = 0;
    let mut prod = T::one();
    let mut sum = T::zero();
    for i in 1..(1u64 << n) {
        let bit = i.trailing_zeros() as usize;
        mask ^= 1 << bit;
        if i % 256 == 0 || prod == T::zero() {
            prod = T::one();
            sum = T::zero();
            for j in crate::channel::members(mask) {
                prod *= off[j];
                sum += mu[j];
            }
        } else if mask & (1 << bit) != 0 {
            prod *= off[bit];
            sum += mu[bit];
        } else {
            prod /= off[bit];
            sum -= mu[bit];
        }
        visit(mask, T::one() - prod, sum);
    }
}

fn check_dims<T: Scalar>(stats: &SecondOrderStats<T>, point: &OperatingPoint<T>) -> Result<()> {
    let n = stats.n_clients();
    for len in [point.mu.len(), point.sigma2.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    if n > MAX_ENUMERATED_CLIENTS {
        return Err(Error::TooManyClients { n, max: MAX_ENUMERATED_CLIENTS });
    }
    Ok(())
}

fn variance_slack<T: Scalar>(stats: &SecondOrderStats<T>, point: &OperatingPoint<T>) -> T {
    point.total_sd() - stats.full().variance.sqrt()
}

/// Necessary conditions for membership in the capacity region, each relaxed
/// by `tol`. The total-rate equality and the variance budget always allow at
/// least [`ANALYTIC_TOL`] of rounding.
pub fn check_outer<T: Scalar>(stats: &SecondOrderStats<T>, point: &OperatingPoint<T>, tol: T) -> Result<FeasibilityReport> {
    check_dims(stats, point)?;
    if tol < T::zero() {
        return Err(Error::Domain("tolerance must be non-negative".into()));
    }
    let mut violations = Vec::new();
    let full = full_mask(stats.n_clients());
    for_each_subset(&stats.off_probs(), &point.mu, |mask, m, sum| {
        let slack = m - sum;
        if slack < -tol && mask != full {
            violations.push(Violation { constraint: Constraint::SubsetRate, subset: Some(mask), slack: slack.as_f64() });
        }
    });
    violations.sort_by_key(|v| v.subset);

    let eq_tol = tol.max(T::lit(ANALYTIC_TOL));
    let total = -(point.total_rate() - stats.full().mean).abs();
    if total < -eq_tol {
        violations.push(Violation { constraint: Constraint::TotalRate, subset: Some(full), slack: total.as_f64() });
    }
    let var = variance_slack(stats, point);
    if var < -eq_tol || point.sigma2.iter().any(|s| s.is_nan()) {
        violations.push(Violation { constraint: Constraint::VarianceBudget, subset: Some(full), slack: var.as_f64() });
    }
    for (i, &m) in point.mu.iter().enumerate() {
        if m < -tol {
            violations.push(Violation { constraint: Constraint::NonNegativeRate, subset: Some(1 << i), slack: m.as_f64() });
        }
    }
    Ok(FeasibilityReport::from_violations(violations))
}

/// Sufficient conditions: every proper subset keeps a margin of `delta`.
pub fn check_inner<T: Scalar>(stats: &SecondOrderStats<T>, point: &OperatingPoint<T>, delta: T) -> Result<FeasibilityReport> {
    check_dims(stats, point)?;
    if !(delta > T::zero()) {
        return Err(Error::Domain(format!("inner-bound margin must be positive, got {delta}")));
    }
    let eq_tol = T::lit(ANALYTIC_TOL);
    let mut violations = Vec::new();
    let full = full_mask(stats.n_clients());
    for_each_subset(&stats.off_probs(), &point.mu, |mask, m, sum| {
        let slack = m - delta - sum;
        if mask != full && slack < T::zero() {
            violations.push(Violation { constraint: Constraint::SubsetRate, subset: Some(mask), slack: slack.as_f64() });
        }
    });
    violations.sort_by_key(|v| v.subset);

    let total = -(point.total_rate() - stats.full().mean).abs();
    if total < -eq_tol {
        violations.push(Violation { constraint: Constraint::TotalRate, subset: Some(full), slack: total.as_f64() });
    }
    let var = variance_slack(stats, point);
    if var < -eq_tol || point.sigma2.iter().any(|s| s.is_nan()) {
        violations.push(Violation { constraint: Constraint::VarianceBudget, subset: Some(full), slack: var.as_f64() });
    }
    for (i, (&m, &s)) in point.mu.iter().zip(&point.sigma2).enumerate() {
        if m < T::zero() {
            violations.push(Violation { constraint: Constraint::NonNegativeRate, subset: Some(1 << i), slack: m.as_f64() });
        }
        if !(s > T::zero()) {
            violations.push(Violation { constraint: Constraint::PositiveVariance, subset: Some(1 << i), slack: s.as_f64() });
        }
    }
    Ok(FeasibilityReport::from_violations(violations))
}

/// The non-empty proper subset minimizing m_S - sum of its rates, with that
/// slack. `None` for a single client, which has no proper subsets.
pub fn most_violated_subset<T: Scalar>(stats: &SecondOrderStats<T>, mu: &[T]) -> Result<Option<(Mask, T)>> {
    let n = stats.n_clients();
    if mu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: mu.len() });
    }
    if n > MAX_ENUMERATED_CLIENTS {
        return Err(Error::TooManyClients { n, max: MAX_ENUMERATED_CLIENTS });
    }
    Ok(min_slack_subset(&stats.off_probs(), mu))
}

pub(crate) fn min_slack_subset<T: Scalar>(off: &[T], mu: &[T]) -> Option<(Mask, T)> {
    let full = full_mask(off.len());
    let eps = T::lit(TIE_EPS);
    let mut best: Option<(Mask, T)> = None;
    for_each_subset(off, mu, |mask, m, sum| {
        if mask == full {
            return;
        }
        let slack = m - sum;
        best = match best {
            None => Some((mask, slack)),
            Some((bm, bs)) if slack < bs - eps || ((slack - bs).abs() <= eps && mask < bm) => Some((mask, slack)),
            keep => keep,
        };
    });
    best
}
