use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::field::PrimeModulus;
use crate::protocol::RoundMessage;
use crate::transport::frame::{decode_frame, encode_frame};
use crate::transport::{check_send, Address, Endpoint, Envelope, Link, Role, Tap, Transport};

type DropFilter = Box<dyn Fn(Link, &RoundMessage) -> bool + Send + Sync>;

struct Mailbox {
    id: usize,
    queue: VecDeque<(Role, Vec<u8>)>,
}

#[derive(Default)]
struct State {
    mailboxes: HashMap<Role, Mailbox>,
    taps: HashMap<Link, Vec<Tap>>,
    dropped: Vec<(Link, RoundMessage)>,
    delivered: u64,
}

/// In-process transport. Messages are stored as encoded frames, so what a
/// receiver decodes is exactly what would have crossed a socket.
pub struct SimTransport {
    modulus: PrimeModulus,
    state: Mutex<State>,
    arrived: Condvar,
    drop_filter: Mutex<Option<DropFilter>>,
    default_timeout: Option<Duration>,
}

impl SimTransport {
    pub fn new(modulus: PrimeModulus) -> Self {
        SimTransport {
            modulus,
            state: Mutex::new(State::default()),
            arrived: Condvar::new(),
            drop_filter: Mutex::new(None),
            default_timeout: None,
        }
    }

    /// Sets the timeout used by `receive(.., None)`. Unbounded by default.
    pub fn with_default_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.default_timeout = timeout;
        self
    }

    pub fn register(&self, role: Role) -> Endpoint {
        let mut st = self.state.lock().unwrap();
        let next = st.mailboxes.len();
        let id = st
            .mailboxes
            .entry(role)
            .or_insert_with(|| Mailbox {
                id: next,
                queue: VecDeque::new(),
            })
            .id;
        Endpoint {
            role,
            address: Address::Mailbox(id),
        }
    }

    /// Silently discards every message for which `filter` returns true.
    /// Discarded messages are kept for inspection via [`Self::dropped`].
    pub fn set_drop_filter(&self, filter: impl Fn(Link, &RoundMessage) -> bool + Send + Sync + 'static) {
        *self.drop_filter.lock().unwrap() = Some(Box::new(filter));
    }

    pub fn clear_drop_filter(&self) {
        *self.drop_filter.lock().unwrap() = None;
    }

    pub fn dropped(&self) -> Vec<(Link, RoundMessage)> {
        self.state.lock().unwrap().dropped.clone()
    }

    pub fn pending(&self, role: Role) -> usize {
        self.state
            .lock()
            .unwrap()
            .mailboxes
            .get(&role)
            .map_or(0, |m| m.queue.len())
    }

    /// Raw bytes of the next frame queued for `role`, without consuming it.
    pub fn peek_frame(&self, role: Role) -> Option<Vec<u8>> {
        let st = self.state.lock().unwrap();
        st.mailboxes.get(&role)?.queue.front().map(|(_, bytes)| bytes.clone())
    }

    pub fn total_pending(&self) -> usize {
        self.state.lock().unwrap().mailboxes.values().map(|m| m.queue.len()).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.state.lock().unwrap().delivered
    }

    fn pop(&self, st: &mut State, at: Role) -> Result<Option<Envelope>> {
        let mailbox = st
            .mailboxes
            .get_mut(&at)
            .ok_or_else(|| Error::ConnectionFault(format!("{at} has no mailbox")))?;
        match mailbox.queue.pop_front() {
            None => Ok(None),
            Some((from, bytes)) => {
                let msg = decode_frame(&bytes, self.modulus)
                    .map_err(|e| Error::ConnectionFault(format!("malformed frame for {at}: {e}")))?;
                Ok(Some(Envelope { from, msg }))
            }
        }
    }
}

impl Transport for SimTransport {
    fn send(&self, from: Role, to: Role, msg: &RoundMessage) -> Result<()> {
        check_send(from, to, msg)?;
        let bytes = encode_frame(msg)?;
        let link = Link::new(from, to);
        let discard = self.drop_filter.lock().unwrap().as_ref().is_some_and(|f| f(link, msg));
        let mut st = self.state.lock().unwrap();
        if !st.mailboxes.contains_key(&to) {
            return Err(Error::ConnectionFault(format!("{to} is not registered")));
        }
        if let Some(taps) = st.taps.get(&link) {
            for tap in taps {
                tap.captured.lock().unwrap().push(msg.clone());
            }
        }
        if discard {
            st.dropped.push((link, msg.clone()));
            return Ok(());
        }
        st.mailboxes.get_mut(&to).unwrap().queue.push_back((from, bytes));
        st.delivered += 1;
        drop(st);
        self.arrived.notify_all();
        Ok(())
    }

    fn receive(&self, at: Role, timeout: Option<Duration>) -> Result<Envelope> {
        let timeout = timeout.or(self.default_timeout);
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(env) = self.pop(&mut st, at)? {
                return Ok(env);
            }
            st = match deadline {
                None => self.arrived.wait(st).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(Error::Timeout);
                    }
                    self.arrived.wait_timeout(st, d - now).unwrap().0
                }
            };
        }
    }

    fn try_receive(&self, at: Role) -> Result<Option<Envelope>> {
        let mut st = self.state.lock().unwrap();
        self.pop(&mut st, at)
    }

    fn eavesdrop_tap(&self, link: Link) -> Result<Tap> {
        let tap = Tap::default();
        self.state.lock().unwrap().taps.entry(link).or_default().push(tap.clone());
        Ok(tap)
    }

    fn endpoint(&self, role: Role) -> Option<Endpoint> {
        self.state.lock().unwrap().mailboxes.get(&role).map(|m| Endpoint {
            role,
            address: Address::Mailbox(m.id),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::ShareVector;
    use std::sync::Arc;

    fn ack(r: u64) -> RoundMessage {
        RoundMessage::RoundAck { round_id: r }
    }

    #[test]
    fn loopback_identity() {
        let t = SimTransport::new(PrimeModulus::default());
        t.register(Role::ParameterServer);
        t.register(Role::Client(0));
        let msg = RoundMessage::ModelBroadcast {
            round_id: 4,
            theta: vec![0.25, -1.0, 3.0],
        };
        t.send(Role::ParameterServer, Role::Client(0), &msg).unwrap();
        let env = t.receive(Role::Client(0), None).unwrap();
        assert_eq!(env.from, Role::ParameterServer);
        assert_eq!(env.msg, msg);
    }

    #[test]
    fn forbidden_links_refused() {
        let t = SimTransport::new(PrimeModulus::default());
        t.register(Role::ParameterServer);
        t.register(Role::Client(1));
        let share = RoundMessage::ShareUpload(ShareVector {
            round_id: 0,
            client_id: 1,
            server_index: 0,
            elements: vec![],
        });
        assert!(matches!(
            t.send(Role::Client(1), Role::ParameterServer, &share),
            Err(Error::Protocol(_))
        ));
        let spoofed = RoundMessage::PlainGradientUpload {
            round_id: 0,
            client_id: 2,
            values: vec![],
        };
        assert!(t.send(Role::Client(1), Role::ParameterServer, &spoofed).is_err());
    }

    #[test]
    fn fifo_and_timeout() {
        let t = SimTransport::new(PrimeModulus::default());
        t.register(Role::ParameterServer);
        t.register(Role::Intermediate(0));
        for r in 0..100 {
            t.send(Role::ParameterServer, Role::Intermediate(0), &ack(r)).unwrap();
        }
        for r in 0..100 {
            assert_eq!(t.receive(Role::Intermediate(0), None).unwrap().msg, ack(r));
        }
        let start = Instant::now();
        let err = t.receive(Role::Intermediate(0), Some(Duration::from_millis(30))).unwrap_err();
        assert!(matches!(err, Error::Timeout));
        assert!(start.elapsed() >= Duration::from_millis(30));
        assert!(t.try_receive(Role::Intermediate(0)).unwrap().is_none());
    }

    #[test]
    fn blocking_receive_wakes() {
        let t = Arc::new(SimTransport::new(PrimeModulus::default()));
        t.register(Role::ParameterServer);
        t.register(Role::Client(0));
        let t2 = Arc::clone(&t);
        let h = std::thread::spawn(move || t2.receive(Role::Client(0), Some(Duration::from_secs(5))));
        std::thread::sleep(Duration::from_millis(20));
        t.send(Role::ParameterServer, Role::Client(0), &ack(9)).unwrap();
        assert_eq!(h.join().unwrap().unwrap().msg, ack(9));
    }

    #[test]
    fn taps_and_drops() {
        let t = SimTransport::new(PrimeModulus::default());
        t.register(Role::ParameterServer);
        t.register(Role::Client(0));
        t.register(Role::Client(1));
        let tap = t.eavesdrop_tap(Link::new(Role::ParameterServer, Role::Client(1))).unwrap();
        t.set_drop_filter(|link, _| link.to == Role::Client(0));
        t.send(Role::ParameterServer, Role::Client(0), &ack(1)).unwrap();
        t.send(Role::ParameterServer, Role::Client(1), &ack(2)).unwrap();
        assert_eq!(t.pending(Role::Client(0)), 0);
        assert_eq!(t.pending(Role::Client(1)), 1);
        assert_eq!(tap.messages(), vec![ack(2)]);
        assert_eq!(t.dropped().len(), 1);
        t.clear_drop_filter();
        t.send(Role::ParameterServer, Role::Client(0), &ack(3)).unwrap();
        assert_eq!(t.pending(Role::Client(0)), 1);
    }
}
