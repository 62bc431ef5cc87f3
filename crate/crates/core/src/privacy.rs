//! Local differential privacy for client gradients and the accountant that
//! tracks the budget across rounds.
//!
//! The mechanism is L1 clipping followed by i.i.d. Laplace noise of scale
//! `Δ/ε` per coordinate. Everything downstream of [`perturb_gradient`]
//! (encoding, sharing, aggregation) is post-processing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::GradientVector;

/// Per-round privacy parameters: budget ε, slack δ, and L1 clip bound Δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    epsilon: f64,
    delta: f64,
    clip_norm: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64, clip_norm: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        if !(clip_norm > 0.0 && clip_norm.is_finite()) {
            return Err(Error::invalid(format!("clip norm must be positive and finite, got {clip_norm}")));
        }
        let params = DpParams {
            epsilon,
            delta,
            clip_norm,
        };
        let b = params.noise_scale();
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::invalid(format!("noise scale {clip_norm}/{epsilon} is not usable")));
        }
        Ok(params)
    }

    /// Pure ε-DP Laplace parameters (δ = 0).
    pub fn laplace(epsilon: f64, clip_norm: f64) -> Result<Self> {
        Self::new(epsilon, 0.0, clip_norm)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    /// Laplace scale `b = Δ/ε`.
    pub fn noise_scale(&self) -> f64 {
        self.clip_norm / self.epsilon
    }
}

/// Scales `g` so that `‖g‖₁ ≤ clip_norm`; vectors inside the ball are
/// returned unchanged.
///
/// The scale factor is nudged down until the rounded output norm is within
/// the bound, which makes clipping idempotent in floating point.
pub fn clip_l1(g: &GradientVector, clip_norm: f64) -> Result<GradientVector> {
    if !(clip_norm > 0.0) {
        return Err(Error::invalid(format!("clip norm must be positive, got {clip_norm}")));
    }
    let norm = g.l1_norm();
    if norm <= clip_norm {
        return Ok(g.clone());
    }
    let mut factor = clip_norm / norm;
    loop {
        let out = g.scaled(factor);
        if out.l1_norm() <= clip_norm {
            return Ok(out);
        }
        factor = factor.next_down();
    }
}

/// Draws one Laplace(0, b) sample via the inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u = loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `dim` i.i.d. Laplace(0, scale) samples.
pub fn laplace_noise<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Result<GradientVector> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("Laplace scale must be positive and finite, got {scale}")));
    }
    if dim == 0 {
        return Err(Error::invalid("noise dimension must be at least 1"));
    }
    Ok(GradientVector((0..dim).map(|_| sample_laplace(scale, rng)).collect()))
}

/// A gradient that has passed through the client-side release step.
///
/// Only [`perturb_gradient`] produces one, so anything built from a
/// `Released` value is post-processing of the mechanism output.
#[derive(Clone, Debug, PartialEq)]
pub struct Released {
    values: GradientVector,
    epsilon: Option<f64>,
}

impl Released {
    pub fn values(&self) -> &GradientVector {
        &self.values
    }

    pub fn into_values(self) -> GradientVector {
        self.values
    }

    /// The per-round ε this release satisfies; `None` for the noiseless path.
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn is_perturbed(&self) -> bool {
        self.epsilon.is_some()
    }
}

/// `(sum_clipped + Lap(Δ/ε)^d) / n_samples`.
///
/// `params = None` is the ε → ∞ limit used by the non-private mechanisms:
/// no noise is drawn and the result is `sum_clipped / n_samples`.
pub fn perturb_gradient<R: Rng + ?Sized>(
    sum_clipped: &GradientVector,
    n_samples: usize,
    params: Option<&DpParams>,
    rng: &mut R,
) -> Result<Released> {
    if n_samples == 0 {
        return Err(Error::invalid("a client needs at least one sample"));
    }
    let inv = 1.0 / n_samples as f64;
    match params {
        None => Ok(Released {
            values: sum_clipped.scaled(inv),
            epsilon: None,
        }),
        Some(p) => {
            let noise = laplace_noise(sum_clipped.len(), p.noise_scale(), rng)?;
            let values = sum_clipped
                .iter()
                .zip(noise.iter())
                .map(|(s, z)| (s + z) * inv)
                .collect::<Vec<_>>();
            Ok(Released {
                values: GradientVector(values),
                epsilon: Some(p.epsilon()),
            })
        }
    }
}

/// Median of the observed L1 norms; mean of the middle pair for even counts.
pub fn calibrate_sensitivity(gradient_l1_norms: &[f64]) -> Result<f64> {
    if gradient_l1_norms.is_empty() {
        return Err(Error::invalid("cannot calibrate sensitivity from no gradients"));
    }
    if gradient_l1_norms.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("gradient norms contain NaN"));
    }
    let mut sorted = gradient_l1_norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyTotals {
    pub epsilon: f64,
    pub delta: f64,
}

/// Append-only per-round record of spent budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    per_round: Vec<DpParams>,
    delta_prime: f64,
}

impl PrivacyLedger {
    pub fn new(delta_prime: f64) -> Result<Self> {
        if !(delta_prime > 0.0 && delta_prime < 1.0) {
            return Err(Error::invalid(format!("delta' must lie in (0, 1), got {delta_prime}")));
        }
        Ok(PrivacyLedger {
            per_round: Vec::new(),
            delta_prime,
        })
    }

    pub fn record(&mut self, params: DpParams) {
        self.per_round.push(params);
    }

    pub fn rounds(&self) -> usize {
        self.per_round.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_round.is_empty()
    }

    pub fn per_round(&self) -> &[DpParams] {
        &self.per_round
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    pub fn basic(&self) -> Result<PrivacyTotals> {
        compose_basic(self)
    }

    /// Advanced composition over the recorded rounds. Heterogeneous rounds
    /// are bounded using the largest per-round ε and δ.
    pub fn advanced(&self) -> Result<PrivacyTotals> {
        if self.per_round.is_empty() {
            return Err(Error::invalid("privacy ledger is empty"));
        }
        let eps = self.per_round.iter().map(|p| p.epsilon).fold(0.0, f64::max);
        let delta = self.per_round.iter().map(|p| p.delta).fold(0.0, f64::max);
        compose_advanced(eps, delta, self.per_round.len() as u64, self.delta_prime)
    }
}

/// Neumaier-compensated sum, so a thousand rounds of 0.1 total exactly 100.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// `(Σ εᵢ, Σ δᵢ)`.
pub fn compose_basic(ledger: &PrivacyLedger) -> Result<PrivacyTotals> {
    if ledger.per_round.is_empty() {
        return Err(Error::invalid("privacy ledger is empty"));
    }
    Ok(PrivacyTotals {
        epsilon: compensated_sum(ledger.per_round.iter().map(|p| p.epsilon)),
        delta: compensated_sum(ledger.per_round.iter().map(|p| p.delta)),
    })
}

/// `ε√(2T ln(1/δ′)) + εT(e^ε − 1)` and `Tδ + δ′`.
pub fn compose_advanced(epsilon: f64, delta: f64, rounds: u64, delta_prime: f64) -> Result<PrivacyTotals> {
    if !(delta_prime > 0.0) {
        return Err(Error::invalid(format!("delta' must be positive, got {delta_prime}")));
    }
    if rounds == 0 {
        return Err(Error::invalid("need at least one round"));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) || !(delta >= 0.0) {
        return Err(Error::invalid(format!("invalid per-round ({epsilon}, {delta})")));
    }
    let t = rounds as f64;
    Ok(PrivacyTotals {
        epsilon: epsilon * (2.0 * t * (1.0 / delta_prime).ln()).sqrt() + epsilon * t * epsilon.exp_m1(),
        delta: t * delta + delta_prime,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationStrategy {
    Uniform,
    /// Geometric decay `α^(t-1)`, α in (0, 1).
    Adaptive { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub total_budget: f64,
    pub rounds: usize,
    pub strategy: AllocationStrategy,
}

/// Per-round budgets summing to `total_budget`.
pub fn allocate_budget(plan: &AllocationPlan) -> Result<Vec<f64>> {
    if plan.rounds == 0 {
        return Err(Error::invalid("need at least one round"));
    }
    if !(plan.total_budget > 0.0 && plan.total_budget.is_finite()) {
        return Err(Error::invalid(format!("total budget must be positive, got {}", plan.total_budget)));
    }
    match plan.strategy {
        AllocationStrategy::Uniform => Ok(vec![plan.total_budget / plan.rounds as f64; plan.rounds]),
        AllocationStrategy::Adaptive { alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            let weights: Vec<f64> = std::iter::successors(Some(1.0f64), |w| Some(w * alpha))
                .take(plan.rounds)
                .collect();
            let total: f64 = weights.iter().sum();
            Ok(weights.iter().map(|w| plan.total_budget * w / total).collect())
        }
    }
}

/// Probability that all `m` independently compromised links fall: `q^m`.
pub fn compromise_probability(q: f64, m: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("q must lie in [0, 1], got {q}")));
    }
    if m == 0 {
        return Err(Error::invalid("need at least one server"));
    }
    Ok(q.powi(m as i32))
}
