//! Experiment configuration file (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sosched_core::sim::default_checkpoints;
use sosched_core::{Channel, Client, ClientConfig, PolicyKind, Sim, SimConfig, Solver, Update};

use crate::error::CliError;

pub const DEFAULT_RUNS: usize = 200;
pub const DEFAULT_HORIZON: u64 = 20_000;

/// One explicitly listed client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Random instance drawn from uniform ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSpec {
    pub n_clients: usize,
    pub seed: u64,
    pub p_range: [f64; 2],
    pub q_range: [f64; 2],
    /// Update probabilities, in units of 1/N.
    pub lambda_range: [f64; 2],
    pub weight_range: [f64; 2],
    /// Draws weights from `weight_range`; otherwise every weight is 1.
    pub weighted: bool,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n_clients: 5,
            seed: 1,
            p_range: [0.05, 0.95],
            q_range: [0.05, 0.95],
            lambda_range: [0.1, 1.0],
            weight_range: [1.0, 5.0],
            weighted: false,
        }
    }
}

impl InstanceSpec {
    /// Draws (p, q, lambda, weight) client by client. Weights are drawn even
    /// when unused so weighted and unweighted instances share channels.
    pub fn generate(&self) -> Result<Vec<ClientSpec>, CliError> {
        if self.n_clients == 0 {
            return Err(CliError::Config("instance.n_clients must be positive".into()));
        }
        for (name, [lo, hi]) in [
            ("p_range", self.p_range),
            ("q_range", self.q_range),
            ("lambda_range", self.lambda_range),
            ("weight_range", self.weight_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CliError::Config(format!("instance.{name} [{lo}, {hi}] is empty")));
            }
        }
        let n = self.n_clients as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |[lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
        Ok((0..self.n_clients)
            .map(|_| {
                let p = draw(self.p_range);
                let q = draw(self.q_range);
                let lambda = draw(self.lambda_range) / n;
                let weight = draw(self.weight_range);
                ClientSpec { p, q, lambda, weight: if self.weighted { weight } else { 1.0 } }
            })
            .collect())
    }
}

/// Single-client grid swept by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            p: (1..=19).map(|k| k as f64 * 0.05).collect(),
            q: vec![0.2, 0.8],
            lambda: vec![1.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub runs: usize,
    pub horizon: u64,
    pub warmup: u64,
    /// Defaults to 100 log-spaced slots plus the horizon.
    pub checkpoints: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    /// Policy of `simulate`.
    pub policy: PolicyKind,
    /// Policies of `compare`, in output order.
    pub policies: Vec<PolicyKind>,
    pub clients: Option<Vec<ClientSpec>>,
    pub instance: Option<InstanceSpec>,
    pub solver: Solver,
    pub sweep: SweepSpec,
    pub weight_baselines: bool,
    /// Resamples channel and arrival traces per policy instead of sharing them.
    pub independent_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            runs: DEFAULT_RUNS,
            horizon: DEFAULT_HORIZON,
            warmup: 0,
            checkpoints: None,
            out: None,
            policy: PolicyKind::Vwd,
            policies: PolicyKind::ALL.to_vec(),
            clients: None,
            instance: None,
            solver: Solver::default(),
            sweep: SweepSpec::default(),
            weight_baselines: false,
            independent_traces: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub horizon: Option<u64>,
    pub out: Option<PathBuf>,
    pub policy: Option<PolicyKind>,
    pub independent_traces: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// `--policy` replaces both the simulate policy and the compare list.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(runs) = o.runs {
            self.runs = runs;
        }
        if let Some(horizon) = o.horizon {
            self.horizon = horizon;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(policy) = o.policy {
            self.policy = policy;
            self.policies = vec![policy];
        }
        self.independent_traces |= o.independent_traces;
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("./out"))
    }

    pub fn client_specs(&self) -> Result<Vec<ClientSpec>, CliError> {
        match (&self.clients, &self.instance) {
            (Some(_), Some(_)) => Err(CliError::Config("give either clients or instance, not both".into())),
            (Some(c), None) if c.is_empty() => Err(CliError::Config("clients list is empty".into())),
            (Some(c), None) => Ok(c.clone()),
            (None, Some(spec)) => spec.generate(),
            (None, None) => Err(CliError::Config("config needs clients or instance".into())),
        }
    }

    pub fn clients(&self) -> Result<Vec<Client>, CliError> {
        self.client_specs()?.iter().map(|c| to_client(*c)).collect()
    }

    /// Simulation settings for `policy` over `clients`.
    pub fn sim_config(&self, clients: Vec<Client>, policy: PolicyKind) -> Result<Sim, CliError> {
        if self.runs < 2 {
            return Err(CliError::Config(format!("runs must be at least 2, got {}", self.runs)));
        }
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be positive".into()));
        }
        let mut cfg = SimConfig::new(clients, self.horizon, self.runs, self.seed, policy);
        cfg.checkpoints = self.checkpoints.clone().unwrap_or_else(|| default_checkpoints(self.horizon));
        cfg.warmup = self.warmup;
        cfg.weight_baselines = self.weight_baselines;
        if self.independent_traces {
            cfg.trace_salt = PolicyKind::ALL.iter().position(|&k| k == policy).expect("known policy") as u64 + 1;
        }
        Ok(cfg)
    }
}

pub fn to_client(c: ClientSpec) -> Result<Client, CliError> {
    Ok(ClientConfig { channel: Channel::new(c.p, c.q)?, update: Update::new(c.lambda, c.weight)? })
}
