//! Minimum weighted-AoI operating point inside the tightened inner region.
//!
//! The objective is separable and strictly decreasing in every sigma_i^2, so
//! the variance budget always binds and the sigma-subproblem has a closed
//! form ([`sigma_allocation`]). What remains is a smooth problem over the
//! rates alone, solved by projected gradient descent with multi-start. The
//! rate region is a slice of a polymatroid; points leaving it are pulled back
//! by proportional redistribution driven by the most violated subset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aoi::{aoi_approx, UpdateModel};
use crate::capacity::{check_inner, for_each_subset, min_slack_subset, OperatingPoint, MAX_ENUMERATED_CLIENTS};
use crate::channel::{full_mask, Mask, SecondOrderStats};
use crate::error::{domain, Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SolverConfig<T> {
    /// Margin subtracted from every proper-subset rate bound.
    pub delta: T,
    pub max_iters: usize,
    /// Initial gradient step.
    pub step_size: T,
    /// Stop once an accepted step improves the objective by less than this (relative).
    pub tolerance: T,
    /// Grid step of [`brute_force_oracle`].
    pub grid_resolution: T,
    /// Lower bound on every rate; the objective diverges at zero.
    pub mu_floor: T,
    /// Number of starting points (the proportional point plus random ones).
    pub starts: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            delta: T::lit(1e-3),
            max_iters: 5000,
            step_size: T::lit(1e-3),
            tolerance: T::lit(1e-13),
            grid_resolution: T::lit(0.005),
            mu_floor: T::lit(1e-4),
            starts: 5,
            seed: 0,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero()) || !(self.tolerance > T::zero()) || !(self.step_size > T::zero()) {
            return domain("delta, tolerance and step_size must be positive");
        }
        if !(self.mu_floor > T::zero()) || !(self.grid_resolution > T::zero()) {
            return domain("mu_floor and grid_resolution must be positive");
        }
        if self.starts == 0 {
            return domain("at least one start is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult<T> {
    pub point: OperatingPoint<T>,
    /// Weighted total AoI predicted at `point`.
    pub objective: T,
    pub iterations: usize,
    /// Proper subsets whose tightened bound has slack at most 10 * delta.
    pub binding_subsets: Vec<Mask>,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
    /// Objective after each accepted step of the winning start.
    #[serde(skip)]
    pub trace: Vec<T>,
}

/// Sum over clients of weight * approximate AoI.
pub fn theoretical_total_aoi<T: Scalar>(point: &OperatingPoint<T>, models: &[UpdateModel<T>]) -> Result<T> {
    if models.len() != point.len() {
        return Err(Error::DimensionMismatch { expected: point.len(), found: models.len() });
    }
    let mut total = T::zero();
    for ((&mu, &s2), m) in point.mu.iter().zip(&point.sigma2).zip(models) {
        if !(s2 > T::zero()) {
            return domain(format!("temporal variance {s2} must be positive"));
        }
        total += m.weight * aoi_approx(mu, s2, m.lambda)?;
    }
    Ok(total)
}

/// Splits the standard-deviation budget `total_sd` to minimize
/// sum_i (w_i / 2) sigma_i^2 / mu_i^2: sigma_i is proportional to mu_i^2 / w_i.
pub fn sigma_allocation<T: Scalar>(mu: &[T], total_sd: T, weights: &[T]) -> Result<Vec<T>> {
    if mu.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: weights.len() });
    }
    if !(total_sd > T::zero()) || mu.iter().any(|&m| !(m > T::zero())) || weights.iter().any(|&w| !(w > T::zero())) {
        return domain("sigma allocation needs positive rates, weights and budget");
    }
    let shares: Vec<T> = mu.iter().zip(weights).map(|(&m, &w)| m * m / w).collect();
    let total: T = shares.iter().copied().sum();
    Ok(shares.iter().map(|&s| (total_sd * s / total).powi(2)).collect())
}

/// The rate-only problem left after eliminating sigma.
#[derive(Debug, Clone)]
pub struct ReducedProblem<T> {
    off: Vec<T>,
    total_rate: T,
    total_sd: T,
    weights: Vec<T>,
    constant: T,
    delta: T,
    floor: T,
}

impl<T: Scalar> ReducedProblem<T> {
    pub fn new(stats: &SecondOrderStats<T>, models: &[UpdateModel<T>], delta: T, floor: T) -> Result<Self> {
        let n = stats.n_clients();
        if models.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: models.len() });
        }
        if n > MAX_ENUMERATED_CLIENTS {
            return Err(Error::TooManyClients { n, max: MAX_ENUMERATED_CLIENTS });
        }
        let full = stats.full();
        if !(full.variance > T::zero()) {
            return domain("full-set temporal variance is zero; no point has positive variances at the optimum");
        }
        let half = T::lit(0.5);
        Ok(Self {
            off: stats.off_probs(),
            total_rate: full.mean,
            total_sd: full.variance.sqrt(),
            weights: models.iter().map(|m| m.weight).collect(),
            constant: models.iter().map(|m| m.weight * (m.lambda.recip() - half)).sum(),
            delta,
            floor,
        })
    }

    pub fn n(&self) -> usize {
        self.off.len()
    }

    fn share_total(&self, mu: &[T]) -> T {
        mu.iter().zip(&self.weights).map(|(&m, &w)| m * m / w).sum()
    }

    /// Weighted total AoI with sigma chosen by [`sigma_allocation`].
    pub fn objective(&self, mu: &[T]) -> T {
        let half = T::lit(0.5);
        let w = self.share_total(mu);
        let inv: T = mu.iter().zip(&self.weights).map(|(&m, &a)| a / m).sum();
        half * self.total_sd * self.total_sd / w + half * inv + self.constant
    }

    pub fn gradient(&self, mu: &[T]) -> Vec<T> {
        let w = self.share_total(mu);
        let v2 = self.total_sd * self.total_sd;
        mu.iter()
            .zip(&self.weights)
            .map(|(&m, &a)| -v2 * m / (a * w * w) - a / (T::lit(2.0) * m * m))
            .collect()
    }

    pub fn point(&self, mu: &[T]) -> Result<OperatingPoint<T>> {
        let sigma2 = sigma_allocation(mu, self.total_sd, &self.weights)?;
        OperatingPoint::new(mu.to_vec(), sigma2)
    }

    /// Smallest tightened slack m_S - delta - sum_S mu over proper subsets.
    fn min_slack(&self, mu: &[T]) -> Option<(Mask, T)> {
        min_slack_subset(&self.off, mu).map(|(m, s)| (m, s - self.delta))
    }

    fn is_feasible(&self, mu: &[T]) -> bool {
        let accept = -self.delta * T::lit(1e-7);
        mu.iter().all(|&m| m >= self.floor)
            && (mu.iter().copied().sum::<T>() - self.total_rate).abs() <= T::lit(1e-12)
            && self.min_slack(mu).is_none_or(|(_, s)| s >= accept)
    }

    /// Euclidean projection onto {sum mu = total_rate, mu >= floor}.
    fn project_slice(&self, x: &[T]) -> Option<Vec<T>> {
        let n = x.len();
        let budget = self.total_rate - self.floor * T::from_count(n as u64);
        if budget < T::zero() {
            return None;
        }
        let y: Vec<T> = x.iter().map(|&v| v - self.floor).collect();
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let mut cum = T::zero();
        let mut theta = T::zero();
        for (k, &v) in sorted.iter().enumerate() {
            cum += v;
            let t = (cum - budget) / T::from_count(k as u64 + 1);
            if v - t > T::zero() {
                theta = t;
            }
        }
        let mut out: Vec<T> = y.iter().map(|&v| (v - theta).max(T::zero()) + self.floor).collect();
        // Land exactly on the equality.
        let err = out.iter().copied().sum::<T>() - self.total_rate;
        if let Some(max) = out.iter_mut().max_by(|a, b| a.partial_cmp(b).expect("finite")) {
            *max -= err;
        }
        Some(out)
    }

    /// Pulls a point on the slice back inside every tightened subset bound by
    /// shrinking the most violated subset and handing the excess to its
    /// complement in proportion to current rates.
    fn repair(&self, mut mu: Vec<T>) -> Option<Vec<T>> {
        const MAX_REPAIRS: usize = 500;
        let margin = self.delta * T::lit(1e-9);
        for _ in 0..MAX_REPAIRS {
            let Some((mask, slack)) = self.min_slack(&mu) else { return Some(mu) };
            if slack >= T::zero() {
                return Some(mu);
            }
            let excess = -slack + margin;
            let inside = |i: usize| mask & (1 << i) != 0;
            let room: T = (0..mu.len()).filter(|&i| inside(i)).map(|i| mu[i] - self.floor).sum();
            let receivers: T = (0..mu.len()).filter(|&i| !inside(i)).map(|i| mu[i]).sum();
            if room <= excess || !(receivers > T::zero()) {
                return None;
            }
            let shrink = excess / room;
            for (i, m) in mu.iter_mut().enumerate() {
                let v = *m;
                if inside(i) {
                    *m = v - (v - self.floor) * shrink;
                } else {
                    *m = v + excess * v / receivers;
                }
            }
        }
        self.is_feasible(&mu).then_some(mu)
    }

    fn project(&self, x: &[T]) -> Option<Vec<T>> {
        let on_slice = self.project_slice(x)?;
        let repaired = self.repair(on_slice)?;
        self.is_feasible(&repaired).then_some(repaired)
    }

    /// Rates proportional to single-client ON fractions, scaled onto the slice.
    fn proportional_start(&self) -> Vec<T> {
        let singles: Vec<T> = self.off.iter().map(|&a| T::one() - a).collect();
        let total: T = singles.iter().copied().sum();
        singles.iter().map(|&m| m * self.total_rate / total).collect()
    }

    fn random_start(&self, anchor: &[T], seed: u64, index: u64) -> Vec<T> {
        let mut rng = rng::stream(seed, index, 0, Purpose::Sampler);
        let raw: Vec<T> = anchor.iter().map(|&a| a * T::lit(rng.random_range(0.2..1.8))).collect();
        let scale = self.total_rate / raw.iter().copied().sum::<T>();
        let candidate: Vec<T> = raw.iter().map(|&r| r * scale).collect();
        if let Some(p) = self.project(&candidate) {
            return p;
        }
        // The region is convex: back off toward the feasible anchor.
        let mut w = T::lit(0.5);
        for _ in 0..30 {
            let mix: Vec<T> = candidate.iter().zip(anchor).map(|(&c, &a)| w * c + (T::one() - w) * a).collect();
            if self.is_feasible(&mix) {
                return mix;
            }
            w = w * T::lit(0.5);
        }
        anchor.to_vec()
    }

    fn descend(&self, start: Vec<T>, cfg: &SolverConfig<T>) -> Descent<T> {
        let mut x = start;
        let mut fx = self.objective(&x);
        let mut trace = vec![fx];
        let mut step = cfg.step_size;
        let min_step = T::lit(1e-18);
        let max_step = T::lit(1e3);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iters {
            iterations += 1;
            let g = self.gradient(&x);
            let mut accepted = None;
            while step >= min_step {
                let trial: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi - step * gi).collect();
                if let Some(y) = self.project(&trial) {
                    let fy = self.objective(&y);
                    if fy < fx {
                        accepted = Some((y, fy));
                        break;
                    }
                }
                step = step * T::lit(0.5);
            }
            let Some((y, fy)) = accepted else {
                converged = true;
                break;
            };
            let improvement = fx - fy;
            x = y;
            fx = fy;
            trace.push(fx);
            step = (step * T::lit(2.0)).min(max_step);
            if improvement <= cfg.tolerance * fx.abs().max(T::one()) {
                converged = true;
                break;
            }
        }
        Descent { mu: x, objective: fx, iterations, converged, trace }
    }

    fn binding_subsets(&self, mu: &[T]) -> Vec<Mask> {
        let full = full_mask(self.n());
        let limit = T::lit(10.0) * self.delta;
        let mut out = Vec::new();
        for_each_subset(&self.off, mu, |mask, m, sum| {
            if mask != full && m - self.delta - sum <= limit {
                out.push(mask);
            }
        });
        out.sort_unstable();
        out
    }

    fn finish(&self, stats: &SecondOrderStats<T>, models: &[UpdateModel<T>], d: Descent<T>) -> Result<SolveResult<T>> {
        let point = self.point(&d.mu)?;
        let report = check_inner(stats, &point, self.delta * (T::one() - T::lit(1e-6)))?;
        if !report.feasible {
            return Err(Error::NumericalInconsistency(format!(
                "solver produced a point outside the inner region: {:?}",
                report.violations
            )));
        }
        Ok(SolveResult {
            objective: theoretical_total_aoi(&point, models)?,
            binding_subsets: self.binding_subsets(&d.mu),
            point,
            iterations: d.iterations,
            converged: d.converged,
            trace: d.trace,
        })
    }
}

struct Descent<T> {
    mu: Vec<T>,
    objective: T,
    iterations: usize,
    converged: bool,
    trace: Vec<T>,
}

/// Minimizes weighted total AoI over the delta-tightened inner region.
pub fn solve_operating_point<T: Scalar>(
    stats: &SecondOrderStats<T>,
    models: &[UpdateModel<T>],
    cfg: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    cfg.validate()?;
    let problem = ReducedProblem::new(stats, models, cfg.delta, cfg.mu_floor)?;
    let proportional = problem.proportional_start();
    let anchor = if problem.is_feasible(&proportional) {
        proportional
    } else {
        match problem.repair(proportional.clone()) {
            Some(p) if problem.is_feasible(&p) => p,
            _ => {
                let point = problem.point(&proportional)?;
                let report = check_inner(stats, &point, cfg.delta)?;
                return Err(Error::InfeasibleRegion { violations: report.violations });
            }
        }
    };
    if problem.n() == 1 {
        let d = Descent { objective: problem.objective(&anchor), mu: anchor, iterations: 0, converged: true, trace: vec![] };
        return problem.finish(stats, models, d);
    }
    let mut best: Option<Descent<T>> = None;
    for s in 0..cfg.starts {
        let start = if s == 0 { anchor.clone() } else { problem.random_start(&anchor, cfg.seed, s as u64) };
        let d = problem.descend(start, cfg);
        let better = match &best {
            None => true,
            Some(b) => d.objective < b.objective - T::lit(1e-12) * b.objective.abs(),
        };
        if better {
            best = Some(d);
        }
    }
    problem.finish(stats, models, best.expect("at least one start"))
}

/// Exhaustive grid search over the rate slice for up to three clients.
pub fn brute_force_oracle<T: Scalar>(
    stats: &SecondOrderStats<T>,
    models: &[UpdateModel<T>],
    delta: T,
    grid_resolution: T,
) -> Result<SolveResult<T>> {
    let n = stats.n_clients();
    if n > 3 {
        return Err(Error::TooManyClients { n, max: 3 });
    }
    if !(grid_resolution > T::zero()) || !(delta > T::zero()) {
        return domain("grid resolution and delta must be positive");
    }
    let floor = T::lit(1e-4);
    let problem = ReducedProblem::new(stats, models, delta, floor)?;
    let total = problem.total_rate;
    let steps = (total / grid_resolution).floor().to_u64().unwrap_or(0);
    let grid = |k: u64| grid_resolution * T::from_count(k);
    let mut best: Option<(Vec<T>, T)> = None;
    let mut consider = |mu: Vec<T>| {
        if mu.iter().any(|&m| m < floor) {
            return;
        }
        if problem.min_slack(&mu).is_some_and(|(_, s)| s < T::zero()) {
            return;
        }
        let f = problem.objective(&mu);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((mu, f));
        }
    };
    match n {
        1 => consider(vec![total]),
        2 => (1..=steps).for_each(|i| consider(vec![grid(i), total - grid(i)])),
        _ => {
            for i in 1..=steps {
                for j in 1..=steps - i {
                    consider(vec![grid(i), grid(j), total - grid(i) - grid(j)]);
                }
            }
        }
    }
    let Some((mu, objective)) = best else {
        return Err(Error::InfeasibleRegion { violations: vec![] });
    };
    let d = Descent { mu, objective, iterations: 0, converged: true, trace: vec![] };
    problem.finish(stats, models, d)
}
