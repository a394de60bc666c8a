//! The five subcommands. Each `*_report` function computes results; each
//! `cmd_*` function also writes them under the output directory.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sosched_core::aoi::aoi_approx;
use sosched_core::capacity::check_inner;
use sosched_core::channel::{empirical_subset_stats, sample_traces, EmpiricalStats};
use sosched_core::solver::theoretical_total_aoi;
use sosched_core::{run_batch, Batch, Client, Error, PolicyKind, Solved, Stats};

use crate::config::{to_client, ClientSpec, ExperimentConfig};
use crate::error::CliError;
use crate::format::{num, write_json, Csv};

pub const VALIDATE_HEADER: [&str; 7] = ["p", "q", "lambda", "theoretical_aoi", "empirical_aoi", "abs_diff", "stderr"];
pub const COMPARE_AOI_HEADER: [&str; 5] = ["policy", "n_clients", "total_aoi_mean", "total_aoi_stderr", "theoretical_aoi"];
pub const VARIANCE_TRAJ_HEADER: [&str; 3] = ["policy", "t", "total_empirical_variance"];
pub const CONVERGENCE_HEADER: [&str; 6] =
    ["client", "t", "empirical_mean", "target_mean", "empirical_variance", "target_variance"];
pub const STATS_HEADER: [&str; 4] = ["mask", "m_s", "v2_s", "monotone"];
pub const STATS_EMPIRICAL_HEADER: [&str; 4] = ["empirical_m_s", "empirical_m_s_stderr", "empirical_v2_s", "empirical_v2_s_stderr"];

/// Largest instance `stats` tabulates.
pub const STATS_MAX_CLIENTS: usize = 20;
/// Largest instance `stats --simulate` estimates.
pub const STATS_SIMULATE_MAX_CLIENTS: usize = 10;

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationRow {
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub theoretical_aoi: f64,
    pub empirical_aoi: f64,
    pub stderr: f64,
}

impl ValidationRow {
    pub fn abs_diff(&self) -> f64 {
        (self.theoretical_aoi - self.empirical_aoi).abs()
    }
}

/// Single-client sweep, rows ordered by q, then lambda, then p. A lone
/// client is served whenever its channel is ON.
pub fn validate_report(cfg: &ExperimentConfig) -> Result<Vec<ValidationRow>, CliError> {
    let sweep = &cfg.sweep;
    if sweep.p.is_empty() || sweep.q.is_empty() || sweep.lambda.is_empty() {
        return Err(CliError::Config("sweep grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &q in &sweep.q {
        for &lambda in &sweep.lambda {
            for &p in &sweep.p {
                let client = to_client(ClientSpec { p, q, lambda, weight: 1.0 })?;
                let stats = Stats::with_default_truncation(vec![client.channel])?;
                let full = stats.full();
                let theoretical_aoi = aoi_approx(full.mean, full.variance, lambda)?;
                let batch = run_batch(&cfg.sim_config(vec![client], PolicyKind::Whittle)?)?;
                rows.push(ValidationRow {
                    p,
                    q,
                    lambda,
                    theoretical_aoi,
                    empirical_aoi: batch.total_aoi_mean,
                    stderr: batch.total_aoi_se,
                });
            }
        }
    }
    Ok(rows)
}

pub fn validate_csv(rows: &[ValidationRow]) -> Csv {
    let mut csv = Csv::new(&VALIDATE_HEADER);
    for r in rows {
        csv.row(&[num(r.p), num(r.q), num(r.lambda), num(r.theoretical_aoi), num(r.empirical_aoi), num(r.abs_diff()), num(r.stderr)]);
    }
    csv
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let rows = validate_report(cfg)?;
    let path = prepare_out(cfg)?.join("validate.csv");
    validate_csv(&rows).write(&path)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    pub mask: u64,
    pub m_s: f64,
    pub v2_s: f64,
    /// No single-client superset has a smaller m.
    pub monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalStats<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub name: String,
    pub clients: Vec<ClientSpec>,
    pub subsets: Vec<SubsetRow>,
}

pub fn stats_report(cfg: &ExperimentConfig, simulate: bool) -> Result<StatsReport, CliError> {
    let specs = cfg.client_specs()?;
    let n = specs.len();
    if n > STATS_MAX_CLIENTS {
        return Err(Error::TooManyClients { n, max: STATS_MAX_CLIENTS }.into());
    }
    if simulate && n > STATS_SIMULATE_MAX_CLIENTS {
        return Err(Error::TooManyClients { n, max: STATS_SIMULATE_MAX_CLIENTS }.into());
    }
    let clients: Vec<Client> = specs.iter().map(|&c| to_client(c)).collect::<Result<_, _>>()?;
    let stats = Stats::with_default_truncation(clients.iter().map(|c| c.channel).collect())?;
    let table = stats.materialize()?;
    let means: Vec<f64> = std::iter::once(0.0).chain(table.iter().map(|(_, s)| s.mean)).collect();
    let traces = if simulate {
        if cfg.runs < 2 {
            return Err(CliError::Config(format!("runs must be at least 2, got {}", cfg.runs)));
        }
        Some(sample_traces(stats.params(), cfg.horizon as usize, cfg.runs, cfg.seed)?)
    } else {
        None
    };
    let subsets = table
        .iter()
        .map(|&(mask, s)| {
            let monotone = (0..n).filter(|i| mask & (1 << i) == 0).all(|i| means[(mask | 1 << i) as usize] >= s.mean - 1e-12);
            let empirical = match &traces {
                Some(t) => Some(empirical_subset_stats(t, mask, cfg.horizon as usize)?),
                None => None,
            };
            Ok(SubsetRow { mask, m_s: s.mean, v2_s: s.variance, monotone, empirical })
        })
        .collect::<Result<_, Error>>()?;
    Ok(StatsReport { name: cfg.name.clone(), clients: specs, subsets })
}

pub fn stats_csv(report: &StatsReport) -> Csv {
    let simulated = report.subsets.first().is_some_and(|r| r.empirical.is_some());
    let mut header = STATS_HEADER.to_vec();
    if simulated {
        header.extend(STATS_EMPIRICAL_HEADER);
    }
    let mut csv = Csv::new(&header);
    for r in &report.subsets {
        let mut fields = vec![r.mask.to_string(), num(r.m_s), num(r.v2_s), u8::from(r.monotone).to_string()];
        if let Some(e) = r.empirical {
            fields.extend([num(e.mean), num(e.mean_se), num(e.variance), num(e.variance_se)]);
        }
        csv.row(&fields);
    }
    csv
}

pub fn cmd_stats(cfg: &ExperimentConfig, simulate: bool) -> Result<Vec<PathBuf>, CliError> {
    let report = stats_report(cfg, simulate)?;
    let dir = prepare_out(cfg)?;
    let (json, csv) = (dir.join("stats.json"), dir.join("stats.csv"));
    write_json(&json, &report)?;
    stats_csv(&report).write(&csv)?;
    Ok(vec![json, csv])
}

/// Instance, its statistics and the re-validated operating point.
#[derive(Debug, Clone)]
pub struct Solution {
    pub clients: Vec<Client>,
    pub stats: Stats,
    pub solved: Solved,
}

pub fn solve(cfg: &ExperimentConfig) -> Result<Solution, CliError> {
    let clients = cfg.clients()?;
    let stats = Stats::with_default_truncation(clients.iter().map(|c| c.channel).collect())?;
    let models: Vec<_> = clients.iter().map(|c| c.update).collect();
    let solved = sosched_core::solve_operating_point(&stats, &models, &cfg.solver)?;
    let recheck = check_inner(&stats, &solved.point, cfg.solver.delta * (1.0 - 1e-6))?;
    if !recheck.feasible {
        return Err(Error::NumericalInconsistency(format!(
            "solver point fails the inner bound: {:?}",
            recheck.violations
        ))
        .into());
    }
    Ok(Solution { clients, stats, solved })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SolveOutput<'a> {
    name: &'a str,
    mu: &'a [f64],
    sigma2: &'a [f64],
    objective: f64,
    binding_subsets: &'a [u64],
    iterations: usize,
    converged: bool,
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let s = solve(cfg)?;
    warn_unconverged(&s.solved);
    let path = prepare_out(cfg)?.join("solve.json");
    write_json(
        &path,
        &SolveOutput {
            name: &cfg.name,
            mu: &s.solved.point.mu,
            sigma2: &s.solved.point.sigma2,
            objective: s.solved.objective,
            binding_subsets: &s.solved.binding_subsets,
            iterations: s.solved.iterations,
            converged: s.solved.converged,
        },
    )?;
    Ok(vec![path])
}

fn warn_unconverged(solved: &Solved) {
    if !solved.converged {
        eprintln!("warning: solver stopped after {} iterations without meeting its tolerance", solved.iterations);
    }
}

/// Batches of several policies on one instance.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub solution: Solution,
    pub theoretical_aoi: f64,
    pub batches: Vec<Batch>,
}

impl Comparison {
    pub fn batch(&self, policy: PolicyKind) -> Option<&Batch> {
        self.batches.iter().find(|b| b.policy == policy)
    }
}

fn run_policies(cfg: &ExperimentConfig, policies: &[PolicyKind]) -> Result<Comparison, CliError> {
    if policies.is_empty() {
        return Err(CliError::Config("policy list is empty".into()));
    }
    let solution = solve(cfg)?;
    warn_unconverged(&solution.solved);
    let models: Vec<_> = solution.clients.iter().map(|c| c.update).collect();
    let theoretical_aoi = theoretical_total_aoi(&solution.solved.point, &models)?;
    let batches = policies
        .iter()
        .map(|&policy| {
            let sim = cfg.sim_config(solution.clients.clone(), policy)?.with_point(solution.solved.point.clone());
            Ok(run_batch(&sim)?)
        })
        .collect::<Result<_, CliError>>()?;
    Ok(Comparison { solution, theoretical_aoi, batches })
}

pub fn compare_report(cfg: &ExperimentConfig) -> Result<Comparison, CliError> {
    run_policies(cfg, &cfg.policies)
}

pub fn compare_aoi_csv(c: &Comparison) -> Csv {
    let mut csv = Csv::new(&COMPARE_AOI_HEADER);
    for b in &c.batches {
        csv.row(&[
            b.policy.to_string(),
            c.solution.clients.len().to_string(),
            num(b.total_aoi_mean),
            num(b.total_aoi_se),
            num(c.theoretical_aoi),
        ]);
    }
    csv
}

pub fn variance_traj_csv(c: &Comparison) -> Csv {
    let mut csv = Csv::new(&VARIANCE_TRAJ_HEADER);
    for b in &c.batches {
        for (t, v) in b.checkpoints.iter().zip(&b.total_variance) {
            csv.row(&[b.policy.to_string(), t.to_string(), num(*v)]);
        }
    }
    csv
}

pub fn convergence_csv(batch: &Batch, solved: &Solved) -> Csv {
    let mut csv = Csv::new(&CONVERGENCE_HEADER);
    for i in 0..batch.mean.len() {
        for (k, t) in batch.checkpoints.iter().enumerate() {
            csv.row(&[
                i.to_string(),
                t.to_string(),
                num(batch.mean[i][k]),
                num(solved.point.mu[i]),
                num(batch.variance[i][k]),
                num(solved.point.sigma2[i]),
            ]);
        }
    }
    csv
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let c = compare_report(cfg)?;
    let dir = prepare_out(cfg)?;
    let mut written = vec![dir.join("compare_aoi.csv"), dir.join("variance_traj.csv")];
    compare_aoi_csv(&c).write(&written[0])?;
    variance_traj_csv(&c).write(&written[1])?;
    if let Some(vwd) = c.batch(PolicyKind::Vwd) {
        let path = dir.join("convergence.csv");
        convergence_csv(vwd, &c.solution.solved).write(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ClientSummary {
    aoi_mean: f64,
    aoi_stderr: f64,
    empirical_mean: f64,
    empirical_mean_stderr: f64,
    target_mean: f64,
    empirical_variance: f64,
    empirical_variance_stderr: f64,
    target_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SimulateOutput {
    name: String,
    policy: PolicyKind,
    n_clients: usize,
    runs: usize,
    horizon: u64,
    seed: u64,
    total_aoi_mean: f64,
    total_aoi_stderr: f64,
    theoretical_aoi: f64,
    rel_deficit_median: f64,
    clients: Vec<ClientSummary>,
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let c = run_policies(cfg, &[cfg.policy])?;
    let b = &c.batches[0];
    let point = &c.solution.solved.point;
    let last = b.checkpoints.len() - 1;
    let clients = (0..point.len())
        .map(|i| ClientSummary {
            aoi_mean: b.client_aoi_mean[i],
            aoi_stderr: b.client_aoi_se[i],
            empirical_mean: b.mean[i][last],
            empirical_mean_stderr: b.mean_se[i][last],
            target_mean: point.mu[i],
            empirical_variance: b.variance[i][last],
            empirical_variance_stderr: b.variance_se[i][last],
            target_variance: point.sigma2[i],
        })
        .collect();
    let out = SimulateOutput {
        name: cfg.name.clone(),
        policy: cfg.policy,
        n_clients: point.len(),
        runs: cfg.runs,
        horizon: cfg.horizon,
        seed: cfg.seed,
        total_aoi_mean: b.total_aoi_mean,
        total_aoi_stderr: b.total_aoi_se,
        theoretical_aoi: c.theoretical_aoi,
        rel_deficit_median: b.rel_deficit_median[last],
        clients,
    };
    let dir = prepare_out(cfg)?;
    let (json, csv) = (dir.join("simulate.json"), dir.join("convergence.csv"));
    write_json(&json, &out)?;
    convergence_csv(b, &c.solution.solved).write(&csv)?;
    Ok(vec![json, csv])
}
