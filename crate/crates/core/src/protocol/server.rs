use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::protocol::RoundMessage;
use crate::sharing::{aggregate_shares, ShareVector};
use crate::transport::Role;

/// Accumulates one share per client per round and emits the partial sum
/// once all `n` have arrived.
#[derive(Clone, Debug)]
pub struct IntermediateServerState {
    server_index: u16,
    n_clients: usize,
    round: u64,
    pending: BTreeMap<u32, ShareVector>,
    finished: bool,
}

impl IntermediateServerState {
    pub fn new(server_index: u16, n_clients: usize) -> Result<Self> {
        if n_clients == 0 {
            return Err(Error::invalid("an intermediate server needs at least one client"));
        }
        Ok(IntermediateServerState {
            server_index,
            n_clients,
            round: 0,
            pending: BTreeMap::new(),
            finished: false,
        })
    }

    pub fn server_index(&self) -> u16 {
        self.server_index
    }

    pub fn role(&self) -> Role {
        Role::Intermediate(self.server_index)
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Client ids still owed for the current round.
    pub fn missing_clients(&self) -> Vec<u32> {
        (0..self.n_clients as u32).filter(|c| !self.pending.contains_key(c)).collect()
    }

    pub fn accept(&mut self, upload: ShareVector) -> Result<Option<RoundMessage>> {
        if upload.server_index != self.server_index {
            return Err(Error::Protocol(format!(
                "server {} received a share addressed to server {}",
                self.server_index, upload.server_index
            )));
        }
        if upload.round_id != self.round {
            return Err(Error::ProtocolDesync {
                expected: self.round,
                got: upload.round_id,
            });
        }
        if upload.client_id as usize >= self.n_clients {
            return Err(Error::Protocol(format!("unknown client {}", upload.client_id)));
        }
        if let Some(first) = self.pending.values().next() {
            if first.dim() != upload.dim() {
                return Err(Error::Protocol(format!(
                    "client {} sent {} elements, expected {}",
                    upload.client_id,
                    upload.dim(),
                    first.dim()
                )));
            }
        }
        let client = upload.client_id;
        if self.pending.insert(client, upload).is_some() {
            return Err(Error::Protocol(format!(
                "server {} got two shares from client {client} in round {}",
                self.server_index, self.round
            )));
        }
        if self.pending.len() < self.n_clients {
            return Ok(None);
        }
        let shares: Vec<ShareVector> = std::mem::take(&mut self.pending).into_values().collect();
        let agg = aggregate_shares(&shares)?;
        self.round += 1;
        Ok(Some(RoundMessage::PartialSum {
            round_id: agg.round_id,
            server_index: agg.server_index,
            elements: agg.elements,
        }))
    }

    pub fn handle(&mut self, msg: RoundMessage) -> Result<Vec<(Role, RoundMessage)>> {
        match msg {
            RoundMessage::ShareUpload(s) => Ok(self.accept(s)?.map(|p| (Role::ParameterServer, p)).into_iter().collect()),
            RoundMessage::RoundAck { .. } => {
                self.finished = true;
                Ok(Vec::new())
            }
            other => Err(Error::Protocol(format!(
                "server {} cannot handle {:?}",
                self.server_index,
                other.message_type()
            ))),
        }
    }
}

/// Feeds a full round of uploads and returns the resulting partial sum.
pub fn server_round(state: &mut IntermediateServerState, uploads: Vec<ShareVector>) -> Result<RoundMessage> {
    let round = state.round;
    let mut out = None;
    for u in uploads {
        if out.is_some() {
            return Err(Error::Protocol(format!("extra upload after round {round} completed")));
        }
        out = state.accept(u)?;
    }
    out.ok_or_else(|| Error::IncompleteRound {
        round,
        detail: format!(
            "server {} still waiting for clients {:?}",
            state.server_index,
            state.missing_clients()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldElement, PrimeModulus};

    fn share(client: u32, values: &[u128]) -> ShareVector {
        let p = PrimeModulus::new(101).unwrap();
        ShareVector {
            round_id: 0,
            client_id: client,
            server_index: 1,
            elements: values.iter().map(|&v| p.element(v)).collect(),
        }
    }

    fn elements(msg: &RoundMessage) -> Vec<u128> {
        match msg {
            RoundMessage::PartialSum { elements, .. } => elements.iter().map(FieldElement::value).collect(),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_client_passthrough() {
        let mut s = IntermediateServerState::new(1, 1).unwrap();
        let out = server_round(&mut s, vec![share(0, &[7, 8])]).unwrap();
        assert_eq!(elements(&out), vec![7, 8]);
    }

    #[test]
    fn two_clients_add_mod_p() {
        let mut s = IntermediateServerState::new(1, 2).unwrap();
        let out = server_round(&mut s, vec![share(1, &[55, 3]), share(0, &[71, 100])]).unwrap();
        assert_eq!(elements(&out), vec![25, 2]);
        assert_eq!(s.round(), 1);
    }

    #[test]
    fn zero_uploads_sum_to_zero() {
        let mut s = IntermediateServerState::new(1, 3).unwrap();
        let out = server_round(&mut s, (0..3).map(|c| share(c, &[0, 0, 0])).collect()).unwrap();
        assert_eq!(elements(&out), vec![0, 0, 0]);
    }

    #[test]
    fn duplicate_and_missing() {
        let mut s = IntermediateServerState::new(1, 3).unwrap();
        let err = server_round(&mut s, vec![share(0, &[1]), share(0, &[2])]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        let mut s = IntermediateServerState::new(1, 3).unwrap();
        let err = server_round(&mut s, vec![share(0, &[1]), share(2, &[2])]).unwrap_err();
        match err {
            Error::IncompleteRound { round: 0, detail } => assert!(detail.contains("[1]")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
