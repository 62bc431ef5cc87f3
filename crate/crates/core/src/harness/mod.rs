//! Experiment runs, sweeps, the accountant table and the cost model, with
//! their CSV and JSON outputs.

mod cost;

use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{allocate_budget, compose_advanced, AllocationPlan, AllocationStrategy};
use crate::protocol::{run_training, MechanismKind, PrivacySummary, TrainingConfig, TrainingReport};

pub use cost::{cost_model, CostRow};

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SWEEP_CSV: &str = "sweep.csv";

/// One row of `rounds.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub test_r2: f64,
    pub uplink_values_per_client: usize,
    pub wall_ms: f64,
}

/// Per-round metrics; `timing = false` writes zero wall times so the file
/// is byte-identical across runs with the same seed.
pub fn write_rounds_csv<W: Write>(report: &TrainingReport, writer: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &report.rounds {
        w.serialize(MetricsRow {
            round: r.round + 1,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            test_loss: r.test_loss,
            test_r2: r.test_r2,
            uplink_values_per_client: r.uplink_values_per_client,
            wall_ms: if timing { r.wall_ms } else { 0.0 },
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rounds_run: u64,
    pub converged: bool,
    pub rounds_to_convergence: u64,
    pub test_loss: f64,
    pub test_r2: f64,
    pub wall_ms: f64,
}

impl SeedResult {
    fn from_report(r: &TrainingReport) -> Self {
        SeedResult {
            seed: r.seed,
            rounds_run: r.rounds_run,
            converged: r.converged,
            rounds_to_convergence: r.rounds_to_convergence,
            test_loss: r.final_test_loss,
            test_r2: r.final_test_r2,
            wall_ms: r.wall_ms,
        }
    }
}

/// Contents of `summary.json`: means over repeats plus the first seed's
/// accounting details.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainingConfig,
    pub repeats: usize,
    pub mean_test_loss: f64,
    pub mean_test_r2: f64,
    pub mean_rounds_run: f64,
    pub mean_rounds_to_convergence: f64,
    pub uplink_values_per_client: usize,
    pub upload_counts: Vec<u64>,
    pub clip_norm: Option<f64>,
    pub privacy: Option<PrivacySummary>,
    pub per_seed: Vec<SeedResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Trains once per seed in `seed..seed + repeats`, in parallel.
pub fn run_repeats(config: &TrainingConfig, repeats: usize) -> Result<Vec<TrainingReport>> {
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    config.validate()?;
    (0..repeats as u64)
        .into_par_iter()
        .map(|k| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(k);
            run_training(&c)
        })
        .collect()
}

pub fn summarize(config: &TrainingConfig, reports: &[TrainingReport]) -> Result<RunSummary> {
    let first = reports.first().ok_or_else(|| Error::invalid("no runs to summarize"))?;
    Ok(RunSummary {
        config: config.clone(),
        repeats: reports.len(),
        mean_test_loss: mean(reports.iter().map(|r| r.final_test_loss)),
        mean_test_r2: mean(reports.iter().map(|r| r.final_test_r2)),
        mean_rounds_run: mean(reports.iter().map(|r| r.rounds_run as f64)),
        mean_rounds_to_convergence: mean(reports.iter().map(|r| r.rounds_to_convergence as f64)),
        uplink_values_per_client: first.uplink_values_per_client,
        upload_counts: first.upload_counts.clone(),
        clip_norm: first.clip_norm,
        privacy: first.privacy.clone(),
        per_seed: reports.iter().map(SeedResult::from_report).collect(),
    })
}

/// `run`: trains, then writes `rounds.csv` (first seed) and `summary.json`.
pub fn cmd_run(config: &TrainingConfig, repeats: usize, out_dir: &Path, timing: bool) -> Result<RunSummary> {
    let reports = run_repeats(config, repeats)?;
    let summary = summarize(config, &reports)?;
    fs::create_dir_all(out_dir)?;
    write_rounds_csv(&reports[0], fs::File::create(out_dir.join(ROUNDS_CSV))?, timing)?;
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out_dir.join(SUMMARY_JSON), json)?;
    info!(
        "{}: mean test loss {:.3e}, mean R2 {:.6} over {repeats} runs",
        config.mechanism, summary.mean_test_loss, summary.mean_test_r2
    );
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    Clients,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Epsilon => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            SweepAxis::Clients => vec![2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }

    fn apply(self, base: &TrainingConfig, value: f64) -> Result<TrainingConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::Epsilon => c.epsilon = value,
            SweepAxis::Clients => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Usage(format!("client count must be a positive integer, got {value}")));
                }
                c.n_clients = value as usize;
            }
        }
        Ok(c)
    }
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub mechanism: MechanismKind,
    pub repeats: usize,
    pub mean_test_loss: f64,
    pub std_test_loss: f64,
    pub mean_test_r2: f64,
    pub std_test_r2: f64,
    pub mean_rounds_to_convergence: f64,
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Every (value, mechanism, seed) combination runs independently; seeds are
/// shared across axis points so neighbouring points see the same data and
/// noise streams.
pub fn run_sweep(
    base: &TrainingConfig,
    axis: SweepAxis,
    values: &[f64],
    mechanisms: &[MechanismKind],
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let mut jobs = Vec::new();
    for &v in values {
        for &m in mechanisms {
            let mut c = axis.apply(base, v)?;
            c.mechanism = m;
            c.validate()?;
            for k in 0..repeats as u64 {
                let mut ck = c.clone();
                ck.seed = base.seed.wrapping_add(k);
                jobs.push((v, m, ck));
            }
        }
    }
    let results: Vec<(f64, MechanismKind, TrainingReport)> = jobs
        .into_par_iter()
        .map(|(v, m, c)| run_training(&c).map(|r| (v, m, r)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &v in values {
        for &m in mechanisms {
            let group: Vec<&TrainingReport> = results
                .iter()
                .filter(|(rv, rm, _)| *rv == v && *rm == m)
                .map(|(_, _, r)| r)
                .collect();
            let losses: Vec<f64> = group.iter().map(|r| r.final_test_loss).collect();
            let r2: Vec<f64> = group.iter().map(|r| r.final_test_r2).collect();
            rows.push(SweepRow {
                axis,
                value: v,
                mechanism: m,
                repeats: group.len(),
                mean_test_loss: mean(losses.iter().copied()),
                std_test_loss: std_dev(&losses),
                mean_test_r2: mean(r2.iter().copied()),
                std_test_r2: std_dev(&r2),
                mean_rounds_to_convergence: mean(group.iter().map(|r| r.rounds_to_convergence as f64)),
            });
        }
    }
    Ok(rows)
}

pub fn write_csv_rows<W: Write, T: Serialize>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(
    base: &TrainingConfig,
    axis: SweepAxis,
    values: &[f64],
    mechanisms: &[MechanismKind],
    repeats: usize,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(base, axis, values, mechanisms, repeats)?;
    fs::create_dir_all(out_dir)?;
    write_csv_rows(&rows, fs::File::create(out_dir.join(SWEEP_CSV))?)?;
    Ok(rows)
}

/// Basic and advanced totals for `rounds` identical rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantRow {
    pub epsilon: f64,
    pub delta: f64,
    pub rounds: u64,
    pub delta_prime: f64,
    pub basic_epsilon: f64,
    pub basic_delta: f64,
    pub advanced_epsilon: f64,
    pub advanced_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub round: usize,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccountantReport {
    pub totals: AccountantRow,
    pub schedule: Option<Vec<ScheduleRow>>,
}

/// Composition totals and, when `alpha` is given, the adaptive schedule
/// spreading `total_budget` (default `epsilon * rounds`) over the rounds.
pub fn cmd_accountant(
    epsilon: f64,
    delta: f64,
    rounds: u64,
    delta_prime: f64,
    alpha: Option<f64>,
    total_budget: Option<f64>,
) -> Result<AccountantReport> {
    if rounds == 0 {
        return Err(Error::invalid("need at least one round"));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
    }
    // identical rounds: (Tε, Tδ)
    let basic_epsilon = epsilon * rounds as f64;
    let basic_delta = delta * rounds as f64;
    let advanced = compose_advanced(epsilon, delta, rounds, delta_prime)?;
    let schedule = match alpha {
        None => None,
        Some(alpha) => {
            let n = usize::try_from(rounds).map_err(|_| Error::invalid("too many rounds"))?;
            let budgets = allocate_budget(&AllocationPlan {
                total_budget: total_budget.unwrap_or(epsilon * rounds as f64),
                rounds: n,
                strategy: AllocationStrategy::Adaptive { alpha },
            })?;
            Some(
                budgets
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| ScheduleRow { round: i + 1, epsilon: e })
                    .collect(),
            )
        }
    };
    Ok(AccountantReport {
        totals: AccountantRow {
            epsilon,
            delta,
            rounds,
            delta_prime,
            basic_epsilon,
            basic_delta,
            advanced_epsilon: advanced.epsilon,
            advanced_delta: advanced.delta,
        },
        schedule,
    })
}
