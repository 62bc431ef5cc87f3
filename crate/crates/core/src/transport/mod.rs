//! Message delivery between roles.
//!
//! Two implementations share the [`Transport`] trait: [`SimTransport`], a
//! deterministic in-process mailbox system with eavesdropping taps and fault
//! injection, and [`TcpTransport`], which carries the same frames over
//! loopback or real sockets.

pub mod frame;
mod sim;
mod tcp;

use std::fmt;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::protocol::{MessageType, RoundMessage};

pub use frame::{decode_frame, encode_frame, frame_len, read_frame, write_frame};
pub use sim::SimTransport;
pub use tcp::TcpTransport;

/// Default receive timeout for [`TcpTransport`].
pub const DEFAULT_TCP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Client(u32),
    Intermediate(u16),
    ParameterServer,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Client(i) => write!(f, "client {i}"),
            Role::Intermediate(j) => write!(f, "server {j}"),
            Role::ParameterServer => write!(f, "parameter server"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Address {
    Mailbox(usize),
    Tcp(SocketAddr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub role: Role,
    pub address: Address,
}

/// A directed link between two roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Link {
    pub from: Role,
    pub to: Role,
}

impl Link {
    pub fn new(from: Role, to: Role) -> Self {
        Link { from, to }
    }
}

/// Which message types may travel over a link. Anything not listed here is
/// refused by every transport, which is what keeps individual shares and
/// DDP-SA gradients away from the parameter server.
pub fn link_permits(from: Role, to: Role, kind: MessageType) -> bool {
    use MessageType::*;
    match (from, to) {
        (Role::ParameterServer, Role::Client(_)) => matches!(kind, ModelBroadcast | RoundAck),
        (Role::ParameterServer, Role::Intermediate(_)) => kind == RoundAck,
        (Role::Client(_), Role::Intermediate(_)) => kind == ShareUpload,
        (Role::Client(_), Role::ParameterServer) => kind == PlainGradientUpload,
        (Role::Intermediate(_), Role::ParameterServer) => kind == PartialSum,
        _ => false,
    }
}

/// The role a message must come from, read off its own fields.
///
/// Frames carry no separate sender header; identity is implied by content and
/// checked against the sending role on every `send`.
pub fn sender_of(msg: &RoundMessage) -> Role {
    match msg {
        RoundMessage::ModelBroadcast { .. } | RoundMessage::RoundAck { .. } => Role::ParameterServer,
        RoundMessage::ShareUpload(s) => Role::Client(s.client_id),
        RoundMessage::PlainGradientUpload { client_id, .. } => Role::Client(*client_id),
        RoundMessage::PartialSum { server_index, .. } => Role::Intermediate(*server_index),
    }
}

pub(crate) fn check_send(from: Role, to: Role, msg: &RoundMessage) -> Result<()> {
    let kind = msg.message_type();
    if !link_permits(from, to, kind) {
        return Err(Error::Protocol(format!("{kind:?} may not travel from {from} to {to}")));
    }
    if sender_of(msg) != from {
        return Err(Error::Protocol(format!("{from} cannot send a {kind:?} labelled as {}", sender_of(msg))));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub from: Role,
    pub msg: RoundMessage,
}

/// Copies of every message crossing one link after the tap was installed.
#[derive(Clone, Debug, Default)]
pub struct Tap {
    pub(crate) captured: Arc<Mutex<Vec<RoundMessage>>>,
}

impl Tap {
    pub fn messages(&self) -> Vec<RoundMessage> {
        self.captured.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.captured.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.captured.lock().unwrap().clear();
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, from: Role, to: Role, msg: &RoundMessage) -> Result<()>;

    /// Blocks until a message arrives for `at`. `None` uses the transport's
    /// default timeout.
    fn receive(&self, at: Role, timeout: Option<Duration>) -> Result<Envelope>;

    fn try_receive(&self, at: Role) -> Result<Option<Envelope>>;

    fn eavesdrop_tap(&self, link: Link) -> Result<Tap>;

    fn endpoint(&self, role: Role) -> Option<Endpoint>;
}
