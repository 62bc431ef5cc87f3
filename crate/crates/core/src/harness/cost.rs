use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PrimeModulus;
use crate::protocol::RoundMessage;
use crate::sharing::ShareVector;
use crate::transport::frame_len;

/// Per-round traffic for one link class.
///
/// `nominal` counts 4 bytes per value; `wire_actual` is the size of
/// the frames this implementation sends, headers included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub link: String,
    pub scope: String,
    pub nominal_bytes: u64,
    pub wire_actual_bytes: u64,
    /// False for client to intermediate traffic, which the 4-byte accounting
    /// leaves out.
    pub counted: bool,
}

fn row(link: &str, scope: &str, nominal: u64, wire: u64, counted: bool) -> CostRow {
    CostRow {
        link: link.into(),
        scope: scope.into(),
        nominal_bytes: nominal,
        wire_actual_bytes: wire,
        counted,
    }
}

pub fn cost_model(d: u64, m: u64, n: u64) -> Result<Vec<CostRow>> {
    if d == 0 || m == 0 || n == 0 {
        return Err(Error::invalid("d, m and n must all be positive"));
    }
    let dim = usize::try_from(d).map_err(|_| Error::invalid("d too large"))?;
    let zero = PrimeModulus::default().zero();
    let broadcast = frame_len(&RoundMessage::ModelBroadcast {
        round_id: 0,
        theta: vec![0.0; dim],
    }) as u64;
    let share = frame_len(&RoundMessage::ShareUpload(ShareVector {
        round_id: 0,
        client_id: 0,
        server_index: 0,
        elements: vec![zero; dim],
    })) as u64;
    let partial = frame_len(&RoundMessage::PartialSum {
        round_id: 0,
        server_index: 0,
        elements: vec![zero; dim],
    }) as u64;
    let plain = frame_len(&RoundMessage::PlainGradientUpload {
        round_id: 0,
        client_id: 0,
        values: vec![0.0; dim],
    }) as u64;
    Ok(vec![
        row("ps_to_client", "per client", 4 * d, broadcast, true),
        row("client_to_intermediates", "per client", 4 * d * m, m * share, false),
        row("intermediates_to_ps", "ps ingress, share mechanisms", 4 * d * m, m * partial, true),
        row("clients_to_ps", "ps ingress, plaintext mechanisms", 4 * d * n, n * plain, true),
    ])
}
