use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FixedPointCodec};
use crate::learning::{apply_update, GradientVector, ModelParams, OptimizerKind, OptimizerState, MODEL_DIM};
use crate::privacy::PrivacyLedger;
use crate::protocol::client::ClientPrivacy;
use crate::protocol::{MechanismKind, PrivacySummary, RoundMessage};
use crate::sharing::{reconstruct, ShareSet, ShareVector, AGGREGATED_CLIENT};

/// Result of a completed round at the parameter server.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub round: u64,
    /// Sum of the client releases, before the `1/n` scaling.
    pub aggregate: Vec<f64>,
    pub theta: ModelParams,
}

pub struct ParameterServerState {
    mechanism: MechanismKind,
    n_clients: usize,
    m_servers: usize,
    theta: ModelParams,
    opt: OptimizerState,
    round: u64,
    codec: FixedPointCodec,
    v_max: f64,
    privacy: Option<ClientPrivacy>,
    ledger: PrivacyLedger,
    partials: BTreeMap<u16, Vec<FieldElement>>,
    plain: BTreeMap<u32, Vec<f64>>,
}

impl ParameterServerState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mechanism: MechanismKind,
        n_clients: usize,
        m_servers: usize,
        optimizer: OptimizerKind,
        codec: FixedPointCodec,
        v_max: f64,
        privacy: Option<ClientPrivacy>,
        delta_prime: f64,
    ) -> Result<Self> {
        if n_clients == 0 {
            return Err(Error::invalid("need at least one client"));
        }
        if mechanism.uses_sharing() && m_servers == 0 {
            return Err(Error::invalid("sharing needs at least one intermediate server"));
        }
        Ok(ParameterServerState {
            mechanism,
            n_clients,
            m_servers,
            theta: ModelParams::default(),
            opt: OptimizerState::new(optimizer, MODEL_DIM),
            round: 0,
            codec,
            v_max,
            privacy,
            ledger: PrivacyLedger::new(delta_prime)?,
            partials: BTreeMap::new(),
            plain: BTreeMap::new(),
        })
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    pub fn broadcast(&self) -> RoundMessage {
        RoundMessage::ModelBroadcast {
            round_id: self.round,
            theta: self.theta.to_vec(),
        }
    }

    /// The termination signal sent to every other role.
    pub fn finish(&self) -> RoundMessage {
        RoundMessage::RoundAck {
            round_id: self.round.saturating_sub(1),
        }
    }

    /// Human-readable list of inputs still owed for the current round.
    pub fn missing_inputs(&self) -> String {
        if self.mechanism.uses_sharing() {
            let missing: Vec<u16> = (0..self.m_servers as u16).filter(|j| !self.partials.contains_key(j)).collect();
            format!("waiting for partial sums from servers {missing:?}")
        } else {
            let missing: Vec<u32> = (0..self.n_clients as u32).filter(|c| !self.plain.contains_key(c)).collect();
            format!("waiting for uploads from clients {missing:?}")
        }
    }

    /// Takes one inbound message; returns the outcome once the round's input
    /// set is complete.
    pub fn accept(&mut self, msg: RoundMessage) -> Result<Option<RoundOutcome>> {
        if msg.round_id() != self.round {
            return Err(Error::ProtocolDesync {
                expected: self.round,
                got: msg.round_id(),
            });
        }
        match (self.mechanism.uses_sharing(), msg) {
            (
                true,
                RoundMessage::PartialSum {
                    server_index,
                    elements,
                    ..
                },
            ) => {
                if server_index as usize >= self.m_servers {
                    return Err(Error::Protocol(format!("unknown intermediate server {server_index}")));
                }
                if elements.len() != MODEL_DIM {
                    return Err(Error::Protocol(format!("partial sum with {} elements", elements.len())));
                }
                if self.partials.insert(server_index, elements).is_some() {
                    return Err(Error::Protocol(format!(
                        "two partial sums from server {server_index} in round {}",
                        self.round
                    )));
                }
                if self.partials.len() < self.m_servers {
                    return Ok(None);
                }
                let aggregate = self.reconstruct_aggregate()?;
                self.complete(aggregate).map(Some)
            }
            (
                false,
                RoundMessage::PlainGradientUpload {
                    client_id, values, ..
                },
            ) => {
                if client_id as usize >= self.n_clients {
                    return Err(Error::Protocol(format!("unknown client {client_id}")));
                }
                if values.len() != MODEL_DIM {
                    return Err(Error::Protocol(format!("upload with {} values", values.len())));
                }
                if self.plain.insert(client_id, values).is_some() {
                    return Err(Error::Protocol(format!(
                        "two uploads from client {client_id} in round {}",
                        self.round
                    )));
                }
                if self.plain.len() < self.n_clients {
                    return Ok(None);
                }
                let mut sum = vec![0.0; MODEL_DIM];
                for values in std::mem::take(&mut self.plain).into_values() {
                    for (s, v) in sum.iter_mut().zip(values) {
                        *s += v;
                    }
                }
                self.complete(sum).map(Some)
            }
            (_, other) => Err(Error::Protocol(format!(
                "parameter server does not accept {:?} under {}",
                other.message_type(),
                self.mechanism
            ))),
        }
    }

    fn reconstruct_aggregate(&mut self) -> Result<Vec<f64>> {
        let shares = std::mem::take(&mut self.partials)
            .into_iter()
            .map(|(server_index, elements)| ShareVector {
                round_id: self.round,
                client_id: AGGREGATED_CLIENT,
                server_index,
                elements,
            })
            .collect();
        let sum = reconstruct(&ShareSet::new(self.m_servers, shares))?;
        let limit = self.n_clients as f64 * self.v_max;
        let decoded = self.codec.decode_vec(&sum)?;
        if decoded.iter().any(|v| !(v.abs() <= limit)) {
            return Err(Error::WraparoundFault { round: self.round });
        }
        Ok(decoded)
    }

    fn complete(&mut self, aggregate: Vec<f64>) -> Result<RoundOutcome> {
        let direction = GradientVector(aggregate.clone()).scaled(1.0 / self.n_clients as f64);
        self.theta = apply_update(&self.theta, &mut self.opt, &direction)?;
        if let Some(p) = &self.privacy {
            self.ledger.record(p.params(self.round)?);
        }
        let outcome = RoundOutcome {
            round: self.round,
            aggregate,
            theta: self.theta,
        };
        self.round += 1;
        Ok(outcome)
    }

    /// Composed totals over the rounds completed so far; `None` for the
    /// non-private mechanisms or before the first round.
    pub fn privacy_summary(&self) -> Result<Option<PrivacySummary>> {
        let Some(p) = &self.privacy else { return Ok(None) };
        if self.ledger.is_empty() {
            return Ok(None);
        }
        Ok(Some(PrivacySummary {
            rounds: self.ledger.rounds(),
            per_round_epsilon_max: self.ledger.per_round().iter().map(|d| d.epsilon()).fold(0.0, f64::max),
            clip_norm: p.clip_norm,
            basic: self.ledger.basic()?,
            advanced: self.ledger.advanced()?,
            delta_prime: self.ledger.delta_prime(),
        }))
    }
}

/// Feeds one round's complete input set and returns the next broadcast.
pub fn ps_round(state: &mut ParameterServerState, inputs: Vec<RoundMessage>) -> Result<RoundMessage> {
    let round = state.round;
    let mut done = false;
    for msg in inputs {
        if done {
            return Err(Error::Protocol(format!("extra input after round {round} completed")));
        }
        done = state.accept(msg)?.is_some();
    }
    if !done {
        return Err(Error::IncompleteRound {
            round,
            detail: state.missing_inputs(),
        });
    }
    Ok(state.broadcast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PrimeModulus;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::new(10, PrimeModulus::default()).unwrap()
    }

    fn ps(mech: MechanismKind, n: usize, m: usize) -> ParameterServerState {
        ParameterServerState::new(mech, n, m, mech.optimizer(), codec(), 1e6, None, 1e-4).unwrap()
    }

    fn partial(round: u64, j: u16, v: &[f64]) -> RoundMessage {
        RoundMessage::PartialSum {
            round_id: round,
            server_index: j,
            elements: codec().encode_vec(v).unwrap(),
        }
    }

    #[test]
    fn single_partial_sum_decodes_exactly() {
        let mut s = ps(MechanismKind::Mpc, 1, 1);
        let out = s.accept(partial(0, 0, &[0.5, -0.25, 1.0])).unwrap().unwrap();
        assert_eq!(out.aggregate, vec![0.5, -0.25, 1.0]);
        assert_eq!(out.theta.to_vec(), vec![-0.05, 0.025, -0.1]);
    }

    #[test]
    fn zero_aggregate_keeps_theta() {
        let mut s = ps(MechanismKind::NoPrivate, 2, 0);
        let inputs = (0..2)
            .map(|c| RoundMessage::PlainGradientUpload {
                round_id: 0,
                client_id: c,
                values: vec![0.0; 3],
            })
            .collect();
        let next = ps_round(&mut s, inputs).unwrap();
        assert_eq!(
            next,
            RoundMessage::ModelBroadcast {
                round_id: 1,
                theta: vec![0.0; 3]
            }
        );
    }

    #[test]
    fn withheld_partial_sum_is_incomplete() {
        let mut s = ps(MechanismKind::DdpSa, 3, 3);
        let err = ps_round(&mut s, vec![partial(0, 0, &[1.0; 3]), partial(0, 2, &[1.0; 3])]).unwrap_err();
        match err {
            Error::IncompleteRound { round: 0, detail } => assert!(detail.contains("[1]")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.theta(), &ModelParams::default());
    }

    #[test]
    fn refuses_wrong_message_kinds() {
        let mut s = ps(MechanismKind::DdpSa, 1, 1);
        let plain = RoundMessage::PlainGradientUpload {
            round_id: 0,
            client_id: 0,
            values: vec![0.0; 3],
        };
        assert!(matches!(s.accept(plain), Err(Error::Protocol(_))));
        let mut s = ps(MechanismKind::Ldp, 1, 0);
        assert!(matches!(s.accept(partial(0, 0, &[0.0; 3])), Err(Error::Protocol(_))));
    }

    #[test]
    fn wraparound_detected() {
        let mut s = ps(MechanismKind::Mpc, 1, 1);
        let p = PrimeModulus::default();
        let huge = RoundMessage::PartialSum {
            round_id: 0,
            server_index: 0,
            elements: vec![p.element(p.half()), p.zero(), p.zero()],
        };
        assert!(matches!(s.accept(huge), Err(Error::WraparoundFault { round: 0 })));
    }
}
