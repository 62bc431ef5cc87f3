use crate::field::FieldElement;
use crate::sharing::ShareVector;

/// Everything that crosses a link during training.
#[derive(Clone, Debug, PartialEq)]
pub enum RoundMessage {
    /// Parameter server to clients: the model for `round_id`.
    ModelBroadcast { round_id: u64, theta: Vec<f64> },
    /// Client to one intermediate server.
    ShareUpload(ShareVector),
    /// Client to parameter server, plaintext mechanisms only.
    PlainGradientUpload {
        round_id: u64,
        client_id: u32,
        values: Vec<f64>,
    },
    /// Intermediate server to parameter server.
    PartialSum {
        round_id: u64,
        server_index: u16,
        elements: Vec<FieldElement>,
    },
    /// Parameter server to every other role once training has ended.
    RoundAck { round_id: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    ModelBroadcast = 1,
    ShareUpload = 2,
    PlainGradientUpload = 3,
    PartialSum = 4,
    RoundAck = 5,
}

impl MessageType {
    pub fn from_u8(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => MessageType::ModelBroadcast,
            2 => MessageType::ShareUpload,
            3 => MessageType::PlainGradientUpload,
            4 => MessageType::PartialSum,
            5 => MessageType::RoundAck,
            _ => return None,
        })
    }
}

impl RoundMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            RoundMessage::ModelBroadcast { .. } => MessageType::ModelBroadcast,
            RoundMessage::ShareUpload(_) => MessageType::ShareUpload,
            RoundMessage::PlainGradientUpload { .. } => MessageType::PlainGradientUpload,
            RoundMessage::PartialSum { .. } => MessageType::PartialSum,
            RoundMessage::RoundAck { .. } => MessageType::RoundAck,
        }
    }

    pub fn round_id(&self) -> u64 {
        match self {
            RoundMessage::ModelBroadcast { round_id, .. }
            | RoundMessage::PlainGradientUpload { round_id, .. }
            | RoundMessage::PartialSum { round_id, .. }
            | RoundMessage::RoundAck { round_id } => *round_id,
            RoundMessage::ShareUpload(s) => s.round_id,
        }
    }

    /// Number of scalar values (doubles or field elements) carried.
    pub fn value_count(&self) -> usize {
        match self {
            RoundMessage::ModelBroadcast { theta, .. } => theta.len(),
            RoundMessage::ShareUpload(s) => s.elements.len(),
            RoundMessage::PlainGradientUpload { values, .. } => values.len(),
            RoundMessage::PartialSum { elements, .. } => elements.len(),
            RoundMessage::RoundAck { .. } => 0,
        }
    }
}
