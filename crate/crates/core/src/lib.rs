//! Second-order scheduling over Gilbert-Elliott channels.
//!
//! Each client's cumulative deliveries are modelled by their long-run mean
//! rate and temporal variance. The crate provides the channel statistics, the
//! inner/outer capacity regions, the Brownian AoI approximation, the
//! operating-point solver, the variance-weighted-deficit scheduler with
//! baselines, and a Monte Carlo engine.
//!
//! Everything is generic over [`Scalar`]; `f64` aliases are at the crate root.

pub mod aoi;
pub mod capacity;
pub mod channel;
pub mod error;
pub mod policies;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use aoi::{aoi_approx, empirical_aoi_renewal, ig_moments, reference_delivery_sampler, HittingMoments, UpdateModel};
pub use capacity::{check_inner, check_outer, most_violated_subset, Constraint, FeasibilityReport, OperatingPoint, Violation};
pub use channel::{ChannelParams, ChannelState, Mask, SecondOrderStats, SubsetStats, Truncation};
pub use error::{Error, Result};
pub use policies::{Decision, PolicyKind, Scheduler, SchedulerState};
pub use scalar::Scalar;
pub use sim::{run_batch, run_episode, BatchMetrics, ClientConfig, RunMetrics, SimConfig};
pub use solver::{solve_operating_point, SolveResult, SolverConfig};

pub type Channel = ChannelParams<f64>;
pub type Stats = SecondOrderStats<f64>;
pub type Point = OperatingPoint<f64>;
pub type Update = UpdateModel<f64>;
pub type Client = ClientConfig<f64>;
pub type Sim = SimConfig<f64>;
pub type Batch = BatchMetrics<f64>;
pub type Solved = SolveResult<f64>;
pub type Solver = SolverConfig<f64>;
