//! Per-slot scheduling rules. Every rule is work-conserving: it picks some
//! ON client whenever one exists. Ties go to the lowest client index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aoi::UpdateModel;
use crate::capacity::OperatingPoint;
use crate::channel::ChannelParams;
use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

/// Scheduler-side view of the system at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState<T> {
    /// t * mu_i minus deliveries so far.
    pub deficits: Vec<T>,
    /// AoI at the AP at the end of the previous slot.
    pub aoi: Vec<u64>,
    /// Number of completed slots.
    pub slot: u64,
}

impl<T: Scalar> SchedulerState<T> {
    pub fn new(n: usize) -> Self {
        Self { deficits: vec![T::zero(); n], aoi: vec![0; n], slot: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Decision {
    pub scheduled: Option<usize>,
}

impl Decision {
    pub const IDLE: Self = Self { scheduled: None };

    pub fn client(i: usize) -> Self {
        Self { scheduled: Some(i) }
    }
}

/// Index of the ON client with the largest score; earlier indices win ties.
fn argmax_on<T: Scalar>(on: &[bool], mut score: impl FnMut(usize) -> T) -> Decision {
    let mut best: Option<(usize, T)> = None;
    for (i, _) in on.iter().enumerate().filter(|(_, &o)| o) {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Decision { scheduled: best.map(|(i, _)| i) }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Variance-weighted deficit: the ON client maximizing d_i / sigma_i.
pub fn vwd_select<T: Scalar>(state: &SchedulerState<T>, point: &OperatingPoint<T>, on: &[bool]) -> Result<Decision> {
    check_len(on.len(), point.len())?;
    check_len(on.len(), state.deficits.len())?;
    if let Some(s) = point.sigma2.iter().find(|&&s| !(s > T::zero())) {
        return domain(format!("VWD needs positive variances, got {s}"));
    }
    Ok(argmax_on(on, |i| state.deficits[i] / point.sigma2[i].sqrt()))
}

/// Advances deficits by one slot: every d_i grows by mu_i, and a delivered
/// client loses one unit.
pub fn update_deficits<T: Scalar>(state: &mut SchedulerState<T>, point: &OperatingPoint<T>, decision: Decision, delivered: bool) {
    for (d, &m) in state.deficits.iter_mut().zip(&point.mu) {
        *d += m;
    }
    if let (Some(i), true) = (decision.scheduled, delivered) {
        state.deficits[i] -= T::one();
    }
    state.slot += 1;
}

/// Whittle index of a client with the given AoI.
pub fn whittle_index<T: Scalar>(aoi: u64, params: &ChannelParams<T>) -> T {
    let a = T::from_count(aoi);
    let half = T::lit(0.5);
    half * a * a - half * a + a / params.stationary_on_prob()
}

pub fn whittle_select<T: Scalar>(state: &SchedulerState<T>, params: &[ChannelParams<T>], on: &[bool]) -> Decision {
    argmax_on(on, |i| whittle_index(state.aoi[i], &params[i]))
}

/// Picks an ON client with probability proportional to its rate, by inverse
/// CDF over ON clients in index order.
pub fn randomized_select<T: Scalar>(point: &OperatingPoint<T>, on: &[bool], u: T) -> Result<Decision> {
    check_len(on.len(), point.len())?;
    let active = || on.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i);
    let Some(last) = active().last() else { return Ok(Decision::IDLE) };
    let total: T = active().map(|i| point.mu[i]).sum();
    if !(total > T::zero()) {
        return domain("every ON client has zero rate");
    }
    let target = u * total;
    let mut cum = T::zero();
    for i in active() {
        cum += point.mu[i];
        if target < cum {
            return Ok(Decision::client(i));
        }
    }
    Ok(Decision::client(last))
}

/// Max-weight score with the expected generation lag 1/lambda in place of
/// the unknown time since generation.
pub fn maxweight_score<T: Scalar>(aoi: u64, model: &UpdateModel<T>, mu: T) -> T {
    (T::from_count(aoi) - model.lambda.recip()) / mu
}

pub fn maxweight_select<T: Scalar>(
    state: &SchedulerState<T>,
    models: &[UpdateModel<T>],
    point: &OperatingPoint<T>,
    on: &[bool],
) -> Result<Decision> {
    check_len(on.len(), point.len())?;
    if let Some(m) = point.mu.iter().find(|&&m| !(m > T::zero())) {
        return domain(format!("max-weight needs positive rates, got {m}"));
    }
    Ok(argmax_on(on, |i| maxweight_score(state.aoi[i], &models[i], point.mu[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Vwd,
    Whittle,
    Randomized,
    #[serde(rename = "maxweight")]
    MaxWeight,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Vwd, PolicyKind::Whittle, PolicyKind::Randomized, PolicyKind::MaxWeight];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Vwd => "vwd",
            PolicyKind::Whittle => "whittle",
            PolicyKind::Randomized => "randomized",
            PolicyKind::MaxWeight => "maxweight",
        }
    }

    pub fn needs_point(self) -> bool {
        !matches!(self, PolicyKind::Whittle)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?} (expected vwd, whittle, randomized or maxweight)")))
    }
}

/// A configured scheduler bound to one instance.
#[derive(Debug, Clone)]
pub struct Scheduler<'a, T> {
    pub kind: PolicyKind,
    pub channels: &'a [ChannelParams<T>],
    pub models: &'a [UpdateModel<T>],
    pub point: Option<&'a OperatingPoint<T>>,
    /// Multiply Whittle and max-weight scores by the AoI weights.
    pub weight_baselines: bool,
}

impl<'a, T: Scalar> Scheduler<'a, T> {
    pub fn new(
        kind: PolicyKind,
        channels: &'a [ChannelParams<T>],
        models: &'a [UpdateModel<T>],
        point: Option<&'a OperatingPoint<T>>,
        weight_baselines: bool,
    ) -> Result<Self> {
        let n = channels.len();
        check_len(n, models.len())?;
        match point {
            Some(p) => check_len(n, p.len())?,
            None if kind.needs_point() => return Err(Error::Config(format!("policy {kind} requires an operating point"))),
            None => {}
        }
        if let Some(p) = point {
            match kind {
                PolicyKind::Vwd if p.sigma2.iter().any(|&s| !(s > T::zero())) => return domain("VWD needs positive variances"),
                PolicyKind::Randomized | PolicyKind::MaxWeight if p.mu.iter().any(|&m| !(m > T::zero())) => {
                    return domain(format!("{kind} needs positive rates"))
                }
                _ => {}
            }
        }
        Ok(Self { kind, channels, models, point, weight_baselines })
    }

    /// Decision for the current slot; `u` is a uniform draw used only by the randomized rule.
    pub fn select(&self, state: &SchedulerState<T>, on: &[bool], u: T) -> Result<Decision> {
        let weight = |i: usize| if self.weight_baselines { self.models[i].weight } else { T::one() };
        match self.kind {
            PolicyKind::Vwd => vwd_select(state, self.point.expect("checked"), on),
            PolicyKind::Randomized => randomized_select(self.point.expect("checked"), on, u),
            PolicyKind::Whittle => Ok(argmax_on(on, |i| weight(i) * whittle_index(state.aoi[i], &self.channels[i]))),
            PolicyKind::MaxWeight => {
                let p = self.point.expect("checked");
                Ok(argmax_on(on, |i| weight(i) * maxweight_score(state.aoi[i], &self.models[i], p.mu[i])))
            }
        }
    }
}
