use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::field::FixedPointCodec;
use crate::learning::{per_sample_gradient, Dataset, GradientVector, ModelParams, MODEL_DIM};
use crate::privacy::{clip_l1, perturb_gradient, DpParams, Released};
use crate::protocol::{MechanismKind, RoundMessage};
use crate::sharing::split_tagged;
use crate::transport::Role;

pub(crate) const NOISE_STREAM: u32 = 1;
pub(crate) const SHARE_STREAM: u32 = 2;
pub(crate) const DATA_STREAM: u32 = 3;

/// A generator for one (seed, owner, purpose, round) tuple. Separate purposes
/// never share a keystream, and the noise a client draws in a round does not
/// depend on whether it later splits the result into shares.
pub(crate) fn keyed_rng(seed: u64, owner: u32, purpose: u32, round: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&owner.to_le_bytes());
    key[12..16].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(round);
    rng
}

/// Privacy settings a client applies: clip bound and the ε for each round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientPrivacy {
    pub clip_norm: f64,
    pub epsilon_schedule: Vec<f64>,
}

impl ClientPrivacy {
    pub fn params(&self, round: u64) -> Result<DpParams> {
        let eps = usize::try_from(round)
            .ok()
            .and_then(|r| self.epsilon_schedule.get(r))
            .ok_or_else(|| Error::Protocol(format!("no privacy budget allocated for round {round}")))?;
        DpParams::laplace(*eps, self.clip_norm)
    }
}

pub struct ClientState {
    client_id: u32,
    rows: Range<usize>,
    data: Arc<Dataset>,
    mechanism: MechanismKind,
    m_servers: usize,
    privacy: Option<ClientPrivacy>,
    codec: FixedPointCodec,
    v_max: f64,
    seed: u64,
    expected_round: u64,
    last_release: Option<Released>,
    uploads_sent: u64,
    values_sent: u64,
    finished: bool,
}

impl ClientState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        client_id: u32,
        rows: Range<usize>,
        data: Arc<Dataset>,
        mechanism: MechanismKind,
        m_servers: usize,
        privacy: Option<ClientPrivacy>,
        codec: FixedPointCodec,
        v_max: f64,
        seed: u64,
    ) -> Result<Self> {
        if rows.is_empty() || rows.end > data.len() {
            return Err(Error::invalid(format!("client {client_id} has an invalid shard {rows:?}")));
        }
        if mechanism.is_private() != privacy.is_some() {
            return Err(Error::invalid(format!("{mechanism} requires privacy settings iff it is private")));
        }
        if mechanism.uses_sharing() && m_servers == 0 {
            return Err(Error::invalid("sharing needs at least one intermediate server"));
        }
        Ok(ClientState {
            client_id,
            rows,
            data,
            mechanism,
            m_servers,
            privacy,
            codec,
            v_max,
            seed,
            expected_round: 0,
            last_release: None,
            uploads_sent: 0,
            values_sent: 0,
            finished: false,
        })
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn role(&self) -> Role {
        Role::Client(self.client_id)
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    /// What this client released in its most recent round.
    pub fn last_release(&self) -> Option<&Released> {
        self.last_release.as_ref()
    }

    pub fn uploads_sent(&self) -> u64 {
        self.uploads_sent
    }

    pub fn values_sent(&self) -> u64 {
        self.values_sent
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Reacts to one message from the parameter server; returns the
    /// messages to send and their destinations.
    pub fn handle(&mut self, msg: &RoundMessage) -> Result<Vec<(Role, RoundMessage)>> {
        match msg {
            RoundMessage::ModelBroadcast { .. } => client_round(self, msg),
            RoundMessage::RoundAck { .. } => {
                self.finished = true;
                Ok(Vec::new())
            }
            other => Err(Error::Protocol(format!(
                "client {} cannot handle {:?}",
                self.client_id,
                other.message_type()
            ))),
        }
    }

    /// The release for this round: clipped and noised for private
    /// mechanisms, the plain mean gradient otherwise.
    fn release(&self, theta: &ModelParams, round: u64) -> Result<Released> {
        let mut sum = GradientVector::zeros(MODEL_DIM);
        let mut noise_rng = keyed_rng(self.seed, self.client_id, NOISE_STREAM, round);
        match &self.privacy {
            Some(privacy) => {
                let params = privacy.params(round)?;
                for i in self.rows.clone() {
                    let g = per_sample_gradient(theta, self.data.features[i], self.data.labels[i]);
                    sum.add_assign(&clip_l1(&g, params.clip_norm())?);
                }
                perturb_gradient(&sum, self.rows.len(), Some(&params), &mut noise_rng)
            }
            None => {
                for i in self.rows.clone() {
                    sum.add_assign(&per_sample_gradient(theta, self.data.features[i], self.data.labels[i]));
                }
                perturb_gradient(&sum, self.rows.len(), None, &mut noise_rng)
            }
        }
    }

    fn uploads(&self, released: &Released, round: u64) -> Result<Vec<(Role, RoundMessage)>> {
        let values = released.values();
        if let Some(v) = values.iter().find(|v| !(v.abs() <= self.v_max)) {
            return Err(Error::EncodingOverflow {
                value: *v,
                decimal_places: self.codec.decimal_places(),
            });
        }
        if !self.mechanism.uses_sharing() {
            return Ok(vec![(
                Role::ParameterServer,
                RoundMessage::PlainGradientUpload {
                    round_id: round,
                    client_id: self.client_id,
                    values: values.to_vec(),
                },
            )]);
        }
        let encoded = self.codec.encode_vec(values)?;
        let mut share_rng = keyed_rng(self.seed, self.client_id, SHARE_STREAM, round);
        let set = split_tagged(&encoded, self.m_servers, round, self.client_id, &mut share_rng)?;
        Ok(set
            .into_shares()
            .into_iter()
            .map(|s| (Role::Intermediate(s.server_index), RoundMessage::ShareUpload(s)))
            .collect())
    }
}

/// Computes, releases and packages this client's contribution to the round
/// announced by `broadcast`.
pub fn client_round(state: &mut ClientState, broadcast: &RoundMessage) -> Result<Vec<(Role, RoundMessage)>> {
    let RoundMessage::ModelBroadcast { round_id, theta } = broadcast else {
        return Err(Error::Protocol("client_round expects a model broadcast".into()));
    };
    if *round_id != state.expected_round {
        return Err(Error::ProtocolDesync {
            expected: state.expected_round,
            got: *round_id,
        });
    }
    let theta = ModelParams::from_slice(theta)?;
    let released = state.release(&theta, *round_id)?;
    let out = state.uploads(&released, *round_id)?;
    state.last_release = Some(released);
    state.expected_round += 1;
    state.uploads_sent += out.len() as u64;
    state.values_sent += out.iter().map(|(_, m)| m.value_count() as u64).sum::<u64>();
    Ok(out)
}
