//! Round state machines for clients, intermediate servers and the parameter
//! server, plus the drivers that run them over a transport.
//!
//! One round:
//!
//! 1. the parameter server broadcasts θ_t;
//! 2. each client computes its gradient, releases it through
//!    [`perturb_gradient`](crate::privacy::perturb_gradient) and either
//!    uploads it in plaintext or splits it into `m` shares;
//! 3. each intermediate server adds the `n` shares it received and forwards
//!    one partial sum;
//! 4. the parameter server reconstructs the aggregate from all `m` partial
//!    sums, scales it by `1/n` and takes an optimizer step.

mod client;
mod driver;
mod message;
mod parameter_server;
mod server;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PrimeModulus;
use crate::learning::{apply_update, per_sample_gradient, Dataset, GradientVector, ModelParams, OptimizerKind, OptimizerState, MODEL_DIM};
use crate::privacy::{allocate_budget, calibrate_sensitivity, AllocationPlan, AllocationStrategy, PrivacyTotals};

pub use client::{client_round, ClientPrivacy, ClientState};
pub use driver::{run_simulated, run_tcp, run_training, run_training_with_data, training_dataset};
pub use message::{MessageType, RoundMessage};
pub use parameter_server::{ps_round, ParameterServerState, RoundOutcome};
pub use server::{server_round, IntermediateServerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    NoPrivate,
    Ldp,
    Mpc,
    DdpSa,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [
        MechanismKind::NoPrivate,
        MechanismKind::Ldp,
        MechanismKind::Mpc,
        MechanismKind::DdpSa,
    ];

    /// Uploads travel as shares through intermediate servers.
    pub fn uses_sharing(self) -> bool {
        matches!(self, MechanismKind::Mpc | MechanismKind::DdpSa)
    }

    /// Clients clip and add Laplace noise.
    pub fn is_private(self) -> bool {
        matches!(self, MechanismKind::Ldp | MechanismKind::DdpSa)
    }

    pub fn optimizer(self) -> OptimizerKind {
        if self.is_private() {
            OptimizerKind::adam(0.001)
        } else {
            OptimizerKind::sgd(0.1)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::NoPrivate => "no_private",
            MechanismKind::Ldp => "ldp",
            MechanismKind::Mpc => "mpc",
            MechanismKind::DdpSa => "ddp_sa",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "no_private" | "noprivate" => Ok(MechanismKind::NoPrivate),
            "ldp" => Ok(MechanismKind::Ldp),
            "mpc" => Ok(MechanismKind::Mpc),
            "ddp_sa" | "ddpsa" => Ok(MechanismKind::DdpSa),
            other => Err(Error::invalid(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Sim,
    Tcp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mechanism: MechanismKind,
    pub n_clients: usize,
    pub m_servers: usize,
    /// Per-round ε under uniform allocation.
    pub epsilon: f64,
    pub delta_prime: f64,
    pub decimal_places: u32,
    #[serde(skip)]
    pub modulus: PrimeModulus,
    /// Largest magnitude a released coordinate may take.
    pub v_max: f64,
    pub max_rounds: u64,
    pub seed: u64,
    pub n_samples: usize,
    pub rel_tol: f64,
    pub patience: u64,
    pub warmup_rounds: usize,
    /// Fixes Δ instead of calibrating it during warm-up.
    pub clip_norm: Option<f64>,
    /// Overrides the mechanism's default learning rate.
    pub learning_rate: Option<f64>,
    /// `Adaptive` spreads a total of `epsilon * max_rounds` geometrically.
    pub allocation: AllocationStrategy,
    pub transport: TransportKind,
    #[serde(skip)]
    pub tcp_timeout: Duration,
    /// Keep the plaintext sum of client releases next to each decoded
    /// aggregate. Test instrumentation; the parameter server never sees it.
    pub audit: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mechanism: MechanismKind::DdpSa,
            n_clients: 3,
            m_servers: 3,
            epsilon: 0.1,
            delta_prime: 1e-4,
            decimal_places: 10,
            modulus: PrimeModulus::default(),
            v_max: 1e6,
            max_rounds: 3000,
            seed: 0,
            n_samples: 10_000,
            rel_tol: 1e-6,
            patience: 50,
            warmup_rounds: 50,
            clip_norm: None,
            learning_rate: None,
            allocation: AllocationStrategy::Uniform,
            transport: TransportKind::Sim,
            tcp_timeout: crate::transport::DEFAULT_TCP_TIMEOUT,
            audit: false,
        }
    }
}

impl TrainingConfig {
    pub fn new(mechanism: MechanismKind) -> Self {
        TrainingConfig {
            mechanism,
            ..Default::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerKind {
        match (self.mechanism.optimizer(), self.learning_rate) {
            (k, None) => k,
            (OptimizerKind::Sgd { .. }, Some(lr)) => OptimizerKind::sgd(lr),
            (OptimizerKind::Adam { beta1, beta2, eps, .. }, Some(lr)) => OptimizerKind::Adam { lr, beta1, beta2, eps },
        }
    }

    /// Intermediate servers actually used: 0 for plaintext mechanisms.
    pub fn servers_in_use(&self) -> usize {
        if self.mechanism.uses_sharing() {
            self.m_servers
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.n_clients > u32::MAX as usize - 1 {
            return Err(Error::invalid(format!("client count {} out of range", self.n_clients)));
        }
        if self.mechanism.uses_sharing() && (self.m_servers == 0 || self.m_servers > u16::MAX as usize) {
            return Err(Error::invalid(format!("server count {} out of range", self.m_servers)));
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol must be non-negative"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::invalid("v_max must be positive and finite"));
        }
        if self.mechanism.is_private() {
            if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
                return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
            }
            if self.clip_norm.is_none() && self.warmup_rounds == 0 {
                return Err(Error::invalid("need warm-up rounds or an explicit clip norm"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("clip norm must be positive, got {c}")));
            }
        }
        if self.mechanism.uses_sharing() {
            let codec = crate::field::FixedPointCodec::new(self.decimal_places, self.modulus)?;
            self.modulus.check_headroom(self.n_clients as u64, codec.scale(), self.v_max)?;
        }
        Ok(())
    }

    /// Per-round ε for every round up to `max_rounds`.
    pub fn epsilon_schedule(&self) -> Result<Vec<f64>> {
        let rounds = usize::try_from(self.max_rounds).map_err(|_| Error::invalid("too many rounds"))?;
        match self.allocation {
            AllocationStrategy::Uniform => Ok(vec![self.epsilon; rounds]),
            AllocationStrategy::Adaptive { .. } => allocate_budget(&AllocationPlan {
                total_budget: self.epsilon * rounds as f64,
                rounds,
                strategy: self.allocation,
            }),
        }
    }
}

/// Stops training once validation loss has not improved by more than
/// `rel_tol` (relative) for `patience` consecutive rounds.
#[derive(Clone, Debug)]
pub struct ConvergenceTracker {
    rel_tol: f64,
    patience: u64,
    best: f64,
    last_improved: Option<u64>,
    stale: u64,
}

impl ConvergenceTracker {
    pub fn new(rel_tol: f64, patience: u64) -> Self {
        ConvergenceTracker {
            rel_tol,
            patience,
            best: f64::INFINITY,
            last_improved: None,
            stale: 0,
        }
    }

    /// Returns true once converged.
    pub fn observe(&mut self, round: u64, val_loss: f64) -> bool {
        if val_loss < self.best - self.rel_tol * self.best.abs() || self.best.is_infinite() {
            self.best = val_loss;
            self.last_improved = Some(round);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.converged()
    }

    pub fn converged(&self) -> bool {
        self.stale >= self.patience
    }

    /// The first round of the patience window, counting rounds from 1 as
    /// completed rounds: i.e. how many rounds it took to reach the plateau.
    pub fn rounds_to_convergence(&self) -> u64 {
        self.last_improved.map_or(0, |r| r + 1)
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Calibrates Δ as the median per-sample L1 gradient norm seen while
/// training a throwaway model, unclipped and noiseless, for `rounds` rounds.
pub fn warmup_sensitivity(data: &Dataset, shards: &[Range<usize>], optimizer: OptimizerKind, rounds: usize) -> Result<f64> {
    if rounds == 0 || shards.is_empty() {
        return Err(Error::invalid("warm-up needs at least one round and one client"));
    }
    let mut theta = ModelParams::default();
    let mut opt = OptimizerState::new(optimizer, MODEL_DIM);
    let mut norms = Vec::with_capacity(rounds * shards.iter().map(|s| s.len()).sum::<usize>());
    for _ in 0..rounds {
        let mut direction = GradientVector::zeros(MODEL_DIM);
        for shard in shards {
            let mut sum = GradientVector::zeros(MODEL_DIM);
            for i in shard.clone() {
                let g = per_sample_gradient(&theta, data.features[i], data.labels[i]);
                norms.push(g.l1_norm());
                sum.add_assign(&g);
            }
            direction.add_assign(&sum.scaled(1.0 / shard.len() as f64));
        }
        theta = apply_update(&theta, &mut opt, &direction.scaled(1.0 / shards.len() as f64))?;
    }
    calibrate_sensitivity(&norms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub test_r2: f64,
    pub uplink_values_per_client: usize,
    pub wall_ms: f64,
    /// Aggregate gradient sum as reconstructed by the parameter server.
    pub aggregate: Vec<f64>,
    /// Plaintext sum of the client releases, present when auditing.
    pub reference_aggregate: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub rounds: usize,
    pub per_round_epsilon_max: f64,
    pub clip_norm: f64,
    pub basic: PrivacyTotals,
    pub advanced: PrivacyTotals,
    pub delta_prime: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mechanism: MechanismKind,
    pub n_clients: usize,
    pub m_servers: usize,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub rounds_run: u64,
    pub converged: bool,
    pub rounds_to_convergence: u64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub final_test_loss: f64,
    pub final_test_r2: f64,
    pub theta: Vec<f64>,
    /// Scalar values (doubles or field elements) each client sends per round.
    pub uplink_values_per_client: usize,
    /// Upload messages sent per client over the whole run.
    pub upload_counts: Vec<u64>,
    pub clip_norm: Option<f64>,
    pub privacy: Option<PrivacySummary>,
    pub wall_ms: f64,
}

impl TrainingReport {
    pub(crate) fn empty(config: &TrainingConfig) -> Self {
        TrainingReport {
            mechanism: config.mechanism,
            n_clients: config.n_clients,
            m_servers: config.servers_in_use(),
            seed: config.seed,
            rounds: Vec::new(),
            rounds_run: 0,
            converged: false,
            rounds_to_convergence: 0,
            final_train_loss: f64::NAN,
            final_val_loss: f64::NAN,
            final_test_loss: f64::NAN,
            final_test_r2: f64::NAN,
            theta: vec![0.0; MODEL_DIM],
            uplink_values_per_client: 0,
            upload_counts: vec![0; config.n_clients],
            clip_norm: None,
            privacy: None,
            wall_ms: 0.0,
        }
    }

    /// Largest per-coordinate gap between decoded and audited aggregates.
    pub fn max_aggregate_gap(&self) -> Option<f64> {
        let mut worst = 0.0f64;
        for r in &self.rounds {
            let reference = r.reference_aggregate.as_ref()?;
            for (a, b) in r.aggregate.iter().zip(reference) {
                worst = worst.max((a - b).abs());
            }
        }
        Some(worst)
    }
}
