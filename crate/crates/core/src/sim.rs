//! Slotted Monte Carlo engine.
//!
//! Within a slot: sensors generate updates, channels move, the scheduler
//! picks an ON client, the chosen client delivers its freshest update, then
//! deficits and AoI are updated (AoI measured at the end of the slot, see
//! [`crate::aoi`]). Runs are independent and use streams keyed by
//! (seed, run, client), so channel and arrival sample paths are shared by
//! every policy simulated with the same seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi::UpdateModel;
use crate::capacity::OperatingPoint;
use crate::channel::{self, ChannelParams, ChannelState};
use crate::error::{Error, Result};
use crate::policies::{update_deficits, Decision, PolicyKind, Scheduler, SchedulerState};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig<T> {
    pub channel: ChannelParams<T>,
    pub update: UpdateModel<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub clients: Vec<ClientConfig<T>>,
    pub horizon: u64,
    pub runs: usize,
    pub seed: u64,
    /// Slots (1-based, sorted, within the horizon) at which delivery counts are sampled.
    pub checkpoints: Vec<u64>,
    /// Leading slots excluded from AoI averages.
    pub warmup: u64,
    pub policy: PolicyKind,
    pub point: Option<OperatingPoint<T>>,
    pub weight_baselines: bool,
    /// Non-zero values decorrelate sample paths from other simulations with the same seed.
    pub trace_salt: u64,
    /// Forces the initial channel states instead of drawing them from stationarity.
    pub initial_on: Option<Vec<bool>>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(clients: Vec<ClientConfig<T>>, horizon: u64, runs: usize, seed: u64, policy: PolicyKind) -> Self {
        Self {
            clients,
            horizon,
            runs,
            seed,
            checkpoints: default_checkpoints(horizon),
            warmup: 0,
            policy,
            point: None,
            weight_baselines: false,
            trace_salt: 0,
            initial_on: None,
        }
    }

    pub fn with_point(mut self, point: OperatingPoint<T>) -> Self {
        self.point = Some(point);
        self
    }

    pub fn channels(&self) -> Vec<ChannelParams<T>> {
        self.clients.iter().map(|c| c.channel).collect()
    }

    pub fn models(&self) -> Vec<UpdateModel<T>> {
        self.clients.iter().map(|c| c.update).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.clients.len();
        if n == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if self.horizon == 0 || self.runs == 0 {
            return Err(Error::Config("horizon and runs must be positive".into()));
        }
        if self.warmup >= self.horizon {
            return Err(Error::Config(format!("warmup {} must be shorter than the horizon", self.warmup)));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        if self.checkpoints.first().is_some_and(|&c| c == 0) || self.checkpoints.last().is_some_and(|&c| c > self.horizon) {
            return Err(Error::Config(format!("checkpoints must lie in 1..={}", self.horizon)));
        }
        if let Some(init) = &self.initial_on {
            if init.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: init.len() });
            }
        }
        let (channels, models) = (self.channels(), self.models());
        Scheduler::new(self.policy, &channels, &models, self.point.as_ref(), self.weight_baselines)?;
        Ok(())
    }

    fn effective_seed(&self) -> u64 {
        if self.trace_salt == 0 {
            self.seed
        } else {
            rng::mix64(self.seed ^ rng::mix64(self.trace_salt))
        }
    }
}

/// 100 log-spaced slots from 1 to `horizon`, plus `horizon` itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut cps: Vec<u64> = (0..100)
        .map(|k| (horizon as f64).powf(k as f64 / 99.0).round().clamp(1.0, horizon as f64) as u64)
        .collect();
    cps.push(horizon);
    cps.sort_unstable();
    cps.dedup();
    cps
}

/// Running sums of inter-delivery times.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InterDelivery {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl InterDelivery {
    fn push(&mut self, gap: u64) {
        let g = gap as f64;
        self.count += 1;
        self.sum += g;
        self.sum_sq += g * g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics<T> {
    /// `[client][checkpoint]` cumulative deliveries.
    pub deliveries_at_checkpoint: Vec<Vec<u64>>,
    pub time_avg_aoi: Vec<T>,
    /// Sum of weight * time-average AoI.
    pub weighted_aoi: T,
    /// max over slots and clients of |d_i / sigma_i - D(t)|; zero without an operating point.
    pub max_rel_deficit: T,
    /// Running value of `max_rel_deficit` at each checkpoint.
    pub rel_deficit_at_checkpoint: Vec<T>,
    pub interdelivery: Vec<InterDelivery>,
    /// Slots in which at least one channel was ON.
    pub busy_slots: u64,
    pub final_deficits: Vec<T>,
}

impl<T: Scalar> RunMetrics<T> {
    pub fn total_deliveries(&self) -> u64 {
        self.deliveries_at_checkpoint.iter().filter_map(|c| c.last()).sum()
    }
}

/// max_i |d_i / sigma_i - D| where D = sum d_i / sum sigma_i.
pub fn relative_deficit<T: Scalar>(deficits: &[T], sigma2: &[T]) -> T {
    let sd: Vec<T> = sigma2.iter().map(|s| s.sqrt()).collect();
    let common = deficits.iter().copied().sum::<T>() / sd.iter().copied().sum::<T>();
    deficits.iter().zip(&sd).map(|(&d, &s)| (d / s - common).abs()).fold(T::zero(), T::max)
}

/// Largest relative deficit along a trajectory of deficit vectors.
pub fn relative_deficit_diagnostic<T: Scalar>(trajectory: &[Vec<T>], sigma2: &[T]) -> T {
    trajectory.iter().map(|d| relative_deficit(d, sigma2)).fold(T::zero(), T::max)
}

/// Simulates one run.
pub fn run_episode<T: Scalar>(cfg: &SimConfig<T>, run: usize) -> Result<RunMetrics<T>> {
    let n = cfg.clients.len();
    let channels = cfg.channels();
    let models = cfg.models();
    let scheduler = Scheduler::new(cfg.policy, &channels, &models, cfg.point.as_ref(), cfg.weight_baselines)?;
    let seed = cfg.effective_seed();
    let run_id = run as u64;
    let mut chan_rng: Vec<_> = (0..n).map(|i| rng::stream(seed, run_id, i as u64, Purpose::Channel)).collect();
    let mut arr_rng: Vec<_> = (0..n).map(|i| rng::stream(seed, run_id, i as u64, Purpose::Arrivals)).collect();
    let mut policy_rng = rng::stream(seed, run_id, 0, Purpose::Policy);
    let lambdas: Vec<f64> = models.iter().map(|m| m.lambda.as_f64()).collect();

    let mut on: Vec<bool> = match &cfg.initial_on {
        Some(init) => init.clone(),
        None => chan_rng
            .iter_mut()
            .zip(&channels)
            .map(|(r, c)| T::lit(r.random::<f64>()) < c.stationary_on_prob())
            .collect(),
    };
    let mut state = SchedulerState::<T>::new(n);
    let mut sensor_stamp = vec![0u64; n];
    let mut ap_stamp = vec![0u64; n];
    let mut deliveries = vec![0u64; n];
    let mut last_delivery: Vec<Option<u64>> = vec![None; n];
    let mut aoi_sum = vec![0u64; n];
    let mut interdelivery = vec![InterDelivery::default(); n];
    let mut at_cp = vec![Vec::with_capacity(cfg.checkpoints.len()); n];
    let mut rel_at_cp = Vec::with_capacity(cfg.checkpoints.len());
    let mut max_rel = T::zero();
    let mut busy = 0u64;
    let mut next_cp = 0;

    for t in 1..=cfg.horizon {
        for (i, r) in arr_rng.iter_mut().enumerate() {
            if r.random::<f64>() < lambdas[i] {
                sensor_stamp[i] = t - 1;
            }
        }
        if t > 1 {
            for ((o, r), c) in on.iter_mut().zip(chan_rng.iter_mut()).zip(&channels) {
                *o = channel::step(ChannelState { on: *o }, c, T::lit(r.random::<f64>())).on;
            }
        }
        let u = if cfg.policy == PolicyKind::Randomized { T::lit(policy_rng.random::<f64>()) } else { T::zero() };
        let decision = scheduler.select(&state, &on, u)?;
        if let Some(i) = decision.scheduled {
            debug_assert!(on[i], "scheduled an OFF client");
            ap_stamp[i] = sensor_stamp[i];
            deliveries[i] += 1;
            if let Some(prev) = last_delivery[i] {
                interdelivery[i].push(t - prev);
            }
            last_delivery[i] = Some(t);
        }
        if on.iter().any(|&o| o) {
            busy += 1;
        }
        if let Some(point) = &cfg.point {
            update_deficits(&mut state, point, decision, decision != Decision::IDLE);
            if point.sigma2.iter().all(|&s| s > T::zero()) {
                max_rel = max_rel.max(relative_deficit(&state.deficits, &point.sigma2));
            }
        } else {
            state.slot += 1;
        }
        for i in 0..n {
            let age = t - ap_stamp[i];
            state.aoi[i] = age;
            if t > cfg.warmup {
                aoi_sum[i] += age;
            }
        }
        if cfg.checkpoints.get(next_cp) == Some(&t) {
            for (c, &d) in at_cp.iter_mut().zip(&deliveries) {
                c.push(d);
            }
            rel_at_cp.push(max_rel);
            next_cp += 1;
        }
    }

    let span = T::from_count(cfg.horizon - cfg.warmup);
    let time_avg_aoi: Vec<T> = aoi_sum.iter().map(|&s| T::from_count(s) / span).collect();
    let weighted_aoi = time_avg_aoi.iter().zip(&models).map(|(&a, m)| a * m.weight).sum();
    Ok(RunMetrics {
        deliveries_at_checkpoint: at_cp,
        time_avg_aoi,
        weighted_aoi,
        max_rel_deficit: max_rel,
        rel_deficit_at_checkpoint: rel_at_cp,
        interdelivery,
        busy_slots: busy,
        final_deficits: state.deficits,
    })
}

/// Across-run statistics of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics<T> {
    pub policy: PolicyKind,
    pub runs: usize,
    pub checkpoints: Vec<u64>,
    /// `[client][checkpoint]` mean over runs of deliveries(t) / t.
    pub mean: Vec<Vec<T>>,
    pub mean_se: Vec<Vec<T>>,
    /// `[client][checkpoint]` across-run sample variance of deliveries(t) / sqrt(t).
    pub variance: Vec<Vec<T>>,
    pub variance_se: Vec<Vec<T>>,
    /// Sum over clients of `variance` at each checkpoint.
    pub total_variance: Vec<T>,
    pub client_aoi_mean: Vec<T>,
    pub client_aoi_se: Vec<T>,
    /// Weighted total AoI, mean over runs and its standard error.
    pub total_aoi_mean: T,
    pub total_aoi_se: T,
    /// Weighted total AoI of each run, in run order.
    pub run_total_aoi: Vec<T>,
    /// Median over runs of the running relative-deficit maximum at each checkpoint.
    pub rel_deficit_median: Vec<T>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Aggregates finished runs.
pub fn summarize<T: Scalar>(cfg: &SimConfig<T>, runs: &[RunMetrics<T>]) -> Result<BatchMetrics<T>> {
    let r = runs.len();
    if r < 2 {
        return Err(Error::InsufficientRuns(r));
    }
    let n = cfg.clients.len();
    let ncp = cfg.checkpoints.len();
    let mut mean = vec![vec![T::zero(); ncp]; n];
    let mut mean_se = mean.clone();
    let mut variance = mean.clone();
    let mut variance_se = mean.clone();
    for i in 0..n {
        for (k, &t) in cfg.checkpoints.iter().enumerate() {
            let tf = t as f64;
            let counts: Vec<f64> = runs.iter().map(|m| m.deliveries_at_checkpoint[i][k] as f64).collect();
            let (mu, mu_se) = channel::mean_and_se(&counts.iter().map(|c| c / tf).collect::<Vec<_>>());
            let scaled: Vec<f64> = counts.iter().map(|c| c / tf.sqrt()).collect();
            let center = scaled.iter().sum::<f64>() / r as f64;
            let sq: Vec<f64> = scaled.iter().map(|x| (x - center).powi(2)).collect();
            let (sq_mean, sq_se) = channel::mean_and_se(&sq);
            let bessel = r as f64 / (r as f64 - 1.0);
            mean[i][k] = T::lit(mu);
            mean_se[i][k] = T::lit(mu_se);
            variance[i][k] = T::lit(sq_mean * bessel);
            variance_se[i][k] = T::lit(sq_se * bessel);
        }
    }
    let total_variance = (0..ncp).map(|k| (0..n).map(|i| variance[i][k]).sum()).collect();
    let mut client_aoi_mean = Vec::with_capacity(n);
    let mut client_aoi_se = Vec::with_capacity(n);
    for i in 0..n {
        let (m, se) = channel::mean_and_se(&runs.iter().map(|x| x.time_avg_aoi[i].as_f64()).collect::<Vec<_>>());
        client_aoi_mean.push(T::lit(m));
        client_aoi_se.push(T::lit(se));
    }
    let run_total_aoi: Vec<T> = runs.iter().map(|x| x.weighted_aoi).collect();
    let (total, total_se) = channel::mean_and_se(&run_total_aoi.iter().map(|x| x.as_f64()).collect::<Vec<_>>());
    let rel_deficit_median = (0..ncp)
        .map(|k| T::lit(median(runs.iter().map(|x| x.rel_deficit_at_checkpoint[k].as_f64()).collect())))
        .collect();
    Ok(BatchMetrics {
        policy: cfg.policy,
        runs: r,
        checkpoints: cfg.checkpoints.clone(),
        mean,
        mean_se,
        variance,
        variance_se,
        total_variance,
        client_aoi_mean,
        client_aoi_se,
        total_aoi_mean: T::lit(total),
        total_aoi_se: T::lit(total_se),
        run_total_aoi,
        rel_deficit_median,
    })
}

/// Runs every episode (in parallel) and aggregates them in run order.
pub fn run_batch<T: Scalar>(cfg: &SimConfig<T>) -> Result<BatchMetrics<T>> {
    let runs = run_all(cfg)?;
    summarize(cfg, &runs)
}

/// All episodes of a batch, in run order.
pub fn run_all<T: Scalar>(cfg: &SimConfig<T>) -> Result<Vec<RunMetrics<T>>> {
    cfg.validate()?;
    if cfg.runs < 2 {
        return Err(Error::InsufficientRuns(cfg.runs));
    }
    (0..cfg.runs).into_par_iter().map(|r| run_episode(cfg, r)).collect()
}
