//! Gilbert-Elliott ON/OFF channels: simulation, closed-form second-order
//! statistics for client subsets, finite-horizon variance and Monte Carlo
//! estimators.
//!
//! Subsets are bitmasks over client indices (bit `i` set = client `i` in the
//! subset).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Bitmask over client indices.
pub type Mask = u64;

/// Clients in `mask`, in increasing index order.
pub fn members(mask: Mask) -> impl Iterator<Item = usize> {
    (0..64).filter(move |i| mask & (1 << i) != 0)
}

pub fn full_mask(n: usize) -> Mask {
    if n >= 64 {
        Mask::MAX
    } else {
        (1 << n) - 1
    }
}

/// Per-slot transition probabilities of a two-state channel.
///
/// `p` is the probability of leaving the good (ON) state, `q` the probability
/// of leaving the bad (OFF) state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams<T> {
    p: T,
    q: T,
}

impl<T: Scalar> ChannelParams<T> {
    pub fn new(p: T, q: T) -> Result<Self> {
        let valid = |x: T| x > T::zero() && x <= T::one();
        if valid(p) && valid(q) {
            Ok(Self { p, q })
        } else {
            Err(Error::InvalidChannel { p: p.as_f64(), q: q.as_f64() })
        }
    }

    /// I.i.d. channel that is ON with probability `q` in every slot.
    pub fn iid(q: T) -> Result<Self> {
        Self::new(T::one() - q, q)
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn q(&self) -> T {
        self.q
    }

    /// Stationary probability of the OFF state, p/(p+q).
    pub fn stationary_off_prob(&self) -> T {
        self.p / (self.p + self.q)
    }

    pub fn stationary_on_prob(&self) -> T {
        self.q / (self.p + self.q)
    }

    /// Second eigenvalue of the transition matrix, 1-p-q.
    pub fn memory(&self) -> T {
        T::one() - self.p - self.q
    }

    /// Probability of being OFF at slot `k` given OFF at slot 1.
    pub fn g_correlation(&self, k: u32) -> T {
        assert!(k >= 1, "lag is 1-based");
        let sum = self.p + self.q;
        self.p / sum + self.q / sum * self.memory().powi(k as i32 - 1)
    }
}

pub fn stationary_off_prob<T: Scalar>(params: &ChannelParams<T>) -> T {
    params.stationary_off_prob()
}

pub fn g_correlation<T: Scalar>(params: &ChannelParams<T>, k: u32) -> T {
    params.g_correlation(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelState {
    pub on: bool,
}

impl ChannelState {
    pub const ON: Self = Self { on: true };
    pub const OFF: Self = Self { on: false };
}

/// One Markov transition driven by the uniform draw `u`.
#[inline]
pub fn step<T: Scalar>(state: ChannelState, params: &ChannelParams<T>, u: T) -> ChannelState {
    if state.on {
        ChannelState { on: u >= params.p }
    } else {
        ChannelState { on: u < params.q }
    }
}

/// Long-run mean and temporal variance of the "some client in S is ON" indicator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubsetStats<T> {
    pub mean: T,
    pub variance: T,
}

/// Truncation of the infinite autocovariance series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation<T> {
    pub max_lag: usize,
    pub tail_tol: T,
}

impl<T: Scalar> Default for Truncation<T> {
    fn default() -> Self {
        Self { max_lag: 100, tail_tol: T::lit(1e-12) }
    }
}

fn off_product<T: Scalar>(params: &[ChannelParams<T>]) -> Result<T> {
    if params.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(params.iter().map(ChannelParams::stationary_off_prob).fold(T::one(), |a, b| a * b))
}

/// m_S = 1 - prod p_i/(p_i+q_i).
pub fn subset_mean<T: Scalar>(params: &[ChannelParams<T>]) -> Result<T> {
    Ok(T::one() - off_product(params)?)
}

/// Temporal variance v_S^2 from the truncated autocovariance series.
pub fn subset_variance<T: Scalar>(params: &[ChannelParams<T>], trunc: Truncation<T>) -> Result<T> {
    if trunc.max_lag == 0 {
        return Err(Error::Domain("truncation must be at least one lag".into()));
    }
    let a = off_product(params)?;
    let mut series = T::zero();
    for k in 1..=trunc.max_lag {
        let joint = params.iter().map(|c| c.g_correlation(k as u32 + 1)).fold(T::one(), |x, y| x * y);
        let term = (joint - a) * a;
        series += term;
        if term.abs() < trunc.tail_tol {
            break;
        }
    }
    let v = T::lit(2.0) * series + a - a * a;
    if v < T::zero() {
        if v < T::lit(-1e-12) {
            return Err(Error::NumericalInconsistency(format!(
                "temporal variance evaluated to {v} for {} channels",
                params.len()
            )));
        }
        return Ok(T::zero());
    }
    Ok(v)
}

pub fn subset_stats<T: Scalar>(params: &[ChannelParams<T>], trunc: Truncation<T>) -> Result<SubsetStats<T>> {
    Ok(SubsetStats { mean: subset_mean(params)?, variance: subset_variance(params, trunc)? })
}

/// Closed form for independent i.i.d. channels with ON probabilities `q`.
pub fn iid_subset_stats<T: Scalar>(q: &[T]) -> Result<SubsetStats<T>> {
    if q.is_empty() {
        return Err(Error::EmptySubset);
    }
    if let Some(bad) = q.iter().find(|&&x| !(x > T::zero() && x <= T::one())) {
        return Err(Error::Domain(format!("ON probability {bad} outside (0, 1]")));
    }
    let off = q.iter().map(|&x| T::one() - x).fold(T::one(), |a, b| a * b);
    Ok(SubsetStats { mean: T::one() - off, variance: off - off * off })
}

/// Variance of the number of ON slots among `horizon` consecutive slots of
/// a stationary chain.
///
/// Iterates the generating functions of the ON count jointly with the final
/// state, carrying their value and first two derivatives at z = 1.
pub fn finite_horizon_variance<T: Scalar>(params: &ChannelParams<T>, horizon: u64) -> Result<T> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least one slot".into()));
    }
    let (p, q) = (params.p, params.q);
    let two = T::lit(2.0);
    // (value, d/dz, d2/dz2) at z = 1 for "ends ON" and "ends OFF".
    let mut on = [params.stationary_on_prob(), T::zero(), T::zero()];
    let mut off = [params.stationary_off_prob(), T::zero(), T::zero()];
    for _ in 0..horizon {
        let h = [
            (T::one() - p) * on[0] + q * off[0],
            (T::one() - p) * on[1] + q * off[1],
            (T::one() - p) * on[2] + q * off[2],
        ];
        let next_off = [
            p * on[0] + (T::one() - q) * off[0],
            p * on[1] + (T::one() - q) * off[1],
            p * on[2] + (T::one() - q) * off[2],
        ];
        // Ending ON multiplies the generating function by z.
        on = [h[0], h[0] + h[1], two * h[1] + h[2]];
        off = next_off;
    }
    let mean = on[1] + off[1];
    let second_factorial = on[2] + off[2];
    Ok((second_factorial + mean - mean * mean).max(T::zero()))
}

/// Closed-form statistics for every client subset of an instance, evaluated
/// on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderStats<T> {
    params: Vec<ChannelParams<T>>,
    truncation: Truncation<T>,
    full: SubsetStats<T>,
}

impl<T: Scalar> SecondOrderStats<T> {
    pub fn new(params: Vec<ChannelParams<T>>, truncation: Truncation<T>) -> Result<Self> {
        if params.len() > 63 {
            return Err(Error::TooManyClients { n: params.len(), max: 63 });
        }
        let full = subset_stats(&params, truncation)?;
        Ok(Self { params, truncation, full })
    }

    pub fn with_default_truncation(params: Vec<ChannelParams<T>>) -> Result<Self> {
        Self::new(params, Truncation::default())
    }

    pub fn n_clients(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ChannelParams<T>] {
        &self.params
    }

    pub fn truncation(&self) -> Truncation<T> {
        self.truncation
    }

    pub fn full(&self) -> SubsetStats<T> {
        self.full
    }

    pub fn full_mask(&self) -> Mask {
        full_mask(self.params.len())
    }

    fn select(&self, mask: Mask) -> Result<Vec<ChannelParams<T>>> {
        if mask == 0 {
            return Err(Error::EmptySubset);
        }
        if mask & !self.full_mask() != 0 {
            return Err(Error::Domain(format!("subset {mask:#b} references unknown clients")));
        }
        Ok(members(mask).map(|i| self.params[i]).collect())
    }

    pub fn mean(&self, mask: Mask) -> Result<T> {
        subset_mean(&self.select(mask)?)
    }

    pub fn subset(&self, mask: Mask) -> Result<SubsetStats<T>> {
        if mask == self.full_mask() {
            return Ok(self.full);
        }
        subset_stats(&self.select(mask)?, self.truncation)
    }

    /// Stationary OFF probability of each client.
    pub fn off_probs(&self) -> Vec<T> {
        self.params.iter().map(ChannelParams::stationary_off_prob).collect()
    }

    /// All 2^N - 1 non-empty subsets in increasing mask order.
    pub fn materialize(&self) -> Result<Vec<(Mask, SubsetStats<T>)>> {
        const MAX: usize = 20;
        if self.params.len() > MAX {
            return Err(Error::TooManyClients { n: self.params.len(), max: MAX });
        }
        (1..=self.full_mask())
            .into_par_iter()
            .map(|m| self.subset(m).map(|s| (m, s)))
            .collect()
    }
}

/// Bit-packed ON/OFF traces for `runs` independent runs of a set of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces<T> {
    params: Vec<ChannelParams<T>>,
    horizon: usize,
    runs: usize,
    words: usize,
    bits: Vec<u64>,
}

impl<T: Scalar> Traces<T> {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn n_clients(&self) -> usize {
        self.params.len()
    }

    fn trace(&self, run: usize, client: usize) -> &[u64] {
        let start = (run * self.params.len() + client) * self.words;
        &self.bits[start..start + self.words]
    }

    /// Whether `client` is ON in 1-based slot `t` of `run`.
    pub fn is_on(&self, run: usize, client: usize, t: usize) -> bool {
        assert!(t >= 1 && t <= self.horizon);
        let idx = t - 1;
        self.trace(run, client)[idx / 64] >> (idx % 64) & 1 == 1
    }

    /// Number of slots among the first `t` in which some client in `mask` is ON.
    pub fn subset_on_count(&self, run: usize, mask: Mask, t: usize) -> u64 {
        let full_words = t / 64;
        let rem = t % 64;
        let clients: Vec<usize> = members(mask).collect();
        let word = |w: usize| clients.iter().fold(0u64, |acc, &c| acc | self.trace(run, c)[w]);
        let mut count: u64 = (0..full_words).map(|w| word(w).count_ones() as u64).sum();
        if rem > 0 {
            count += (word(full_words) & ((1u64 << rem) - 1)).count_ones() as u64;
        }
        count
    }
}

/// Simulates `runs` independent stationary realizations of each channel.
///
/// Client `i` of run `r` draws from its own stream, so traces are identical
/// for a given seed regardless of scheduling.
pub fn sample_traces<T: Scalar>(params: &[ChannelParams<T>], horizon: usize, runs: usize, seed: u64) -> Result<Traces<T>> {
    if horizon == 0 || runs == 0 {
        return Err(Error::Domain("horizon and runs must be positive".into()));
    }
    let words = horizon.div_ceil(64);
    let n = params.len();
    let mut bits = vec![0u64; runs * n * words];
    bits.par_chunks_mut(words).enumerate().for_each(|(idx, out)| {
        let (run, client) = (idx / n, idx % n);
        let chan = &params[client];
        let mut rng = rng::stream(seed, run as u64, client as u64, Purpose::Channel);
        let mut state = ChannelState { on: T::lit(rng.random::<f64>()) < chan.stationary_on_prob() };
        for t in 0..horizon {
            if t > 0 {
                state = step(state, chan, T::lit(rng.random::<f64>()));
            }
            if state.on {
                out[t / 64] |= 1 << (t % 64);
            }
        }
    });
    Ok(Traces { params: params.to_vec(), horizon, runs, words, bits })
}

/// Across-run estimates with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats<T> {
    pub mean: T,
    pub mean_se: T,
    pub variance: T,
    pub variance_se: T,
}

/// Estimates (m_S, v_S^2) at slot `t` from sampled traces.
///
/// The variance estimate centers the partial sums on the closed-form m_S.
pub fn empirical_subset_stats<T: Scalar>(traces: &Traces<T>, mask: Mask, t: usize) -> Result<EmpiricalStats<T>> {
    if traces.runs < 2 {
        return Err(Error::InsufficientRuns(traces.runs));
    }
    if t == 0 || t > traces.horizon {
        return Err(Error::Domain(format!("checkpoint {t} outside 1..={}", traces.horizon)));
    }
    if mask == 0 || mask & !full_mask(traces.n_clients()) != 0 {
        return Err(Error::Domain(format!("invalid subset {mask:#b}")));
    }
    let selected: Vec<_> = members(mask).map(|i| traces.params[i]).collect();
    let m = subset_mean(&selected)?.as_f64();
    let tf = t as f64;
    let counts: Vec<f64> = (0..traces.runs).map(|r| traces.subset_on_count(r, mask, t) as f64).collect();
    let fractions: Vec<f64> = counts.iter().map(|c| c / tf).collect();
    let sq_dev: Vec<f64> = counts.iter().map(|c| (c - tf * m).powi(2) / tf).collect();
    let (mean, mean_se) = mean_and_se(&fractions);
    let (variance, variance_se) = mean_and_se(&sq_dev);
    Ok(EmpiricalStats {
        mean: T::lit(mean),
        mean_se: T::lit(mean_se),
        variance: T::lit(variance),
        variance_se: T::lit(variance_se),
    })
}

/// Sample mean and its standard error (sample sd / sqrt(n)).
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
