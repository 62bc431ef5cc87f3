//! Length-prefixed binary framing.
//!
//! ```text
//! +----------------+----------+-----------------------+
//! | length: u32 BE | type: u8 | payload (length bytes)|
//! +----------------+----------+-----------------------+
//! ```
//!
//! Payloads, all integers big-endian, doubles IEEE-754 binary64 big-endian,
//! field elements 16-byte big-endian:
//!
//! | type | message             | payload                                        |
//! |------|---------------------|------------------------------------------------|
//! | 1    | ModelBroadcast      | round u64, d x f64                             |
//! | 2    | ShareUpload         | round u64, client u32, server u16, d u32, d x 16 |
//! | 3    | PlainGradientUpload | round u64, client u32, d x f64                 |
//! | 4    | PartialSum          | round u64, server u16, d x 16                  |
//! | 5    | RoundAck            | round u64                                      |
//!
//! Types 1, 3 and 4 derive `d` from the payload length.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::field::{PrimeModulus, ELEMENT_BYTES};
use crate::protocol::{MessageType, RoundMessage};
use crate::sharing::ShareVector;

pub const HEADER_BYTES: usize = 5;

fn payload_len(msg: &RoundMessage) -> usize {
    match msg {
        RoundMessage::ModelBroadcast { theta, .. } => 8 + 8 * theta.len(),
        RoundMessage::ShareUpload(s) => s.encoded_len(),
        RoundMessage::PlainGradientUpload { values, .. } => 12 + 8 * values.len(),
        RoundMessage::PartialSum { elements, .. } => 10 + ELEMENT_BYTES * elements.len(),
        RoundMessage::RoundAck { .. } => 8,
    }
}

/// Total bytes on the wire for `msg`, header included.
pub fn frame_len(msg: &RoundMessage) -> usize {
    HEADER_BYTES + payload_len(msg)
}

pub fn encode_frame(msg: &RoundMessage) -> Result<Vec<u8>> {
    let len = payload_len(msg);
    let len32 = u32::try_from(len).map_err(|_| Error::Frame(format!("payload of {len} bytes exceeds 2^32 - 1")))?;
    if let RoundMessage::ShareUpload(s) = msg {
        if u32::try_from(s.elements.len()).is_err() {
            return Err(Error::Frame("share vector too long".into()));
        }
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + len);
    out.extend_from_slice(&len32.to_be_bytes());
    out.push(msg.message_type() as u8);
    match msg {
        RoundMessage::ModelBroadcast { round_id, theta } => {
            out.extend_from_slice(&round_id.to_be_bytes());
            for v in theta {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        RoundMessage::ShareUpload(s) => s.write_to(&mut out),
        RoundMessage::PlainGradientUpload {
            round_id,
            client_id,
            values,
        } => {
            out.extend_from_slice(&round_id.to_be_bytes());
            out.extend_from_slice(&client_id.to_be_bytes());
            for v in values {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        RoundMessage::PartialSum {
            round_id,
            server_index,
            elements,
        } => {
            out.extend_from_slice(&round_id.to_be_bytes());
            out.extend_from_slice(&server_index.to_be_bytes());
            for e in elements {
                out.extend_from_slice(&e.to_be_bytes());
            }
        }
        RoundMessage::RoundAck { round_id } => out.extend_from_slice(&round_id.to_be_bytes()),
    }
    debug_assert_eq!(out.len(), HEADER_BYTES + len);
    Ok(out)
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().unwrap())
}

fn f64s(body: &[u8], what: &str) -> Result<Vec<f64>> {
    if body.len() % 8 != 0 {
        return Err(Error::Frame(format!("{what}: {} bytes is not a whole number of doubles", body.len())));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
        .collect())
}

/// Decodes the payload of a frame whose header has already been read.
pub fn decode_payload(msg_type: u8, payload: &[u8], modulus: PrimeModulus) -> Result<RoundMessage> {
    let kind = MessageType::from_u8(msg_type).ok_or_else(|| Error::Frame(format!("unknown message type {msg_type}")))?;
    let need = |n: usize| {
        if payload.len() < n {
            Err(Error::Frame(format!("{kind:?} payload truncated: {} < {n} bytes", payload.len())))
        } else {
            Ok(())
        }
    };
    Ok(match kind {
        MessageType::ModelBroadcast => {
            need(8)?;
            RoundMessage::ModelBroadcast {
                round_id: be_u64(payload),
                theta: f64s(&payload[8..], "ModelBroadcast")?,
            }
        }
        MessageType::ShareUpload => RoundMessage::ShareUpload(ShareVector::from_bytes(payload, modulus)?),
        MessageType::PlainGradientUpload => {
            need(12)?;
            RoundMessage::PlainGradientUpload {
                round_id: be_u64(payload),
                client_id: u32::from_be_bytes(payload[8..12].try_into().unwrap()),
                values: f64s(&payload[12..], "PlainGradientUpload")?,
            }
        }
        MessageType::PartialSum => {
            need(10)?;
            let body = &payload[10..];
            if body.len() % ELEMENT_BYTES != 0 {
                return Err(Error::Frame(format!("PartialSum body of {} bytes", body.len())));
            }
            RoundMessage::PartialSum {
                round_id: be_u64(payload),
                server_index: u16::from_be_bytes(payload[8..10].try_into().unwrap()),
                elements: body
                    .chunks_exact(ELEMENT_BYTES)
                    .map(|c| modulus.element_from_be_bytes(c.try_into().unwrap()))
                    .collect::<Result<_>>()?,
            }
        }
        MessageType::RoundAck => {
            if payload.len() != 8 {
                return Err(Error::Frame(format!("RoundAck payload of {} bytes", payload.len())));
            }
            RoundMessage::RoundAck {
                round_id: be_u64(payload),
            }
        }
    })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8], modulus: PrimeModulus) -> Result<RoundMessage> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Frame(format!("frame of {} bytes has no header", bytes.len())));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() - HEADER_BYTES != len {
        return Err(Error::Frame(format!(
            "length field says {len} bytes, frame carries {}",
            bytes.len() - HEADER_BYTES
        )));
    }
    decode_payload(bytes[4], &bytes[HEADER_BYTES..], modulus)
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &RoundMessage) -> Result<()> {
    writer.write_all(&encode_frame(msg)?)?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any header
/// byte; a stream that ends mid-frame is a connection fault.
pub fn read_frame<R: Read>(reader: &mut R, modulus: PrimeModulus) -> Result<Option<RoundMessage>> {
    let mut header = [0u8; HEADER_BYTES];
    let mut filled = 0;
    while filled < HEADER_BYTES {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::ConnectionFault("stream closed inside frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; len];
    reader
        .read_exact(&mut payload)
        .map_err(|e| Error::ConnectionFault(format!("stream closed inside frame payload: {e}")))?;
    decode_payload(header[4], &payload, modulus)
        .map(Some)
        .map_err(|e| Error::ConnectionFault(format!("malformed frame: {e}")))
}
