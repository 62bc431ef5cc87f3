use std::collections::{HashMap, VecDeque};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::field::PrimeModulus;
use crate::protocol::RoundMessage;
use crate::transport::frame::{encode_frame, read_frame};
use crate::transport::{
    check_send, link_permits, sender_of, Address, Endpoint, Envelope, Link, Role, Tap, Transport, DEFAULT_TCP_TIMEOUT,
};

#[derive(Default)]
struct Inbox {
    queue: Mutex<VecDeque<Result<Envelope>>>,
    arrived: Condvar,
}

impl Inbox {
    fn push(&self, item: Result<Envelope>) {
        self.queue.lock().unwrap().push_back(item);
        self.arrived.notify_all();
    }
}

/// Frames over TCP. Every local role listens on its own socket; each
/// directed link uses one outbound connection, so per-link delivery is FIFO.
pub struct TcpTransport {
    modulus: PrimeModulus,
    timeout: Duration,
    book: HashMap<Role, SocketAddr>,
    inboxes: HashMap<Role, Arc<Inbox>>,
    outbound: Mutex<HashMap<Link, Arc<Mutex<BufWriter<TcpStream>>>>>,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
    shutdown: Arc<AtomicBool>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl TcpTransport {
    /// Every role in one process, each on an ephemeral 127.0.0.1 port.
    pub fn loopback(roles: &[Role], modulus: PrimeModulus) -> Result<Self> {
        let local: Vec<(Role, SocketAddr)> = roles.iter().map(|&r| (r, SocketAddr::from(([127, 0, 0, 1], 0)))).collect();
        Self::bind(&local, &[], modulus)
    }

    /// Binds listeners for `local` roles; `remote` maps the roles hosted by
    /// other processes to their addresses.
    pub fn bind(local: &[(Role, SocketAddr)], remote: &[(Role, SocketAddr)], modulus: PrimeModulus) -> Result<Self> {
        let mut book: HashMap<Role, SocketAddr> = remote.iter().copied().collect();
        let mut inboxes = HashMap::new();
        let mut listeners = Vec::new();
        for &(role, addr) in local {
            let listener = TcpListener::bind(addr)?;
            book.insert(role, listener.local_addr()?);
            let inbox = Arc::new(Inbox::default());
            inboxes.insert(role, Arc::clone(&inbox));
            listeners.push((role, listener, inbox));
        }
        let transport = TcpTransport {
            modulus,
            timeout: DEFAULT_TCP_TIMEOUT,
            book,
            inboxes,
            outbound: Mutex::new(HashMap::new()),
            accepted: Arc::new(Mutex::new(Vec::new())),
            shutdown: Arc::new(AtomicBool::new(false)),
            threads: Mutex::new(Vec::new()),
        };
        for (role, listener, inbox) in listeners {
            let handle = spawn_acceptor(
                role,
                listener,
                inbox,
                modulus,
                Arc::clone(&transport.accepted),
                Arc::clone(&transport.shutdown),
            );
            transport.threads.lock().unwrap().push(handle);
        }
        Ok(transport)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn address(&self, role: Role) -> Option<SocketAddr> {
        self.book.get(&role).copied()
    }

    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    fn connection(&self, link: Link) -> Result<Arc<Mutex<BufWriter<TcpStream>>>> {
        let mut out = self.outbound.lock().unwrap();
        if let Some(c) = out.get(&link) {
            return Ok(Arc::clone(c));
        }
        let addr = self
            .book
            .get(&link.to)
            .ok_or_else(|| Error::ConnectionFault(format!("no address for {}", link.to)))?;
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::ConnectionFault(format!("connect to {} at {addr}: {e}", link.to)))?;
        stream.set_nodelay(true)?;
        debug!("opened link {} -> {} ({addr})", link.from, link.to);
        let c = Arc::new(Mutex::new(BufWriter::new(stream)));
        out.insert(link, Arc::clone(&c));
        Ok(c)
    }
}

fn spawn_acceptor(
    role: Role,
    listener: TcpListener,
    inbox: Arc<Inbox>,
    modulus: PrimeModulus,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
    shutdown: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut readers = Vec::new();
        for stream in listener.incoming() {
            if shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("{role}: accept failed: {e}");
                    continue;
                }
            };
            if let Ok(clone) = stream.try_clone() {
                accepted.lock().unwrap().push(clone);
            }
            let inbox = Arc::clone(&inbox);
            let shutdown = Arc::clone(&shutdown);
            readers.push(std::thread::spawn(move || read_loop(role, stream, inbox, modulus, shutdown)));
        }
        for r in readers {
            let _ = r.join();
        }
    })
}

fn read_loop(role: Role, stream: TcpStream, inbox: Arc<Inbox>, modulus: PrimeModulus, shutdown: Arc<AtomicBool>) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader, modulus) {
            Ok(Some(msg)) => {
                let from = sender_of(&msg);
                if !link_permits(from, role, msg.message_type()) {
                    inbox.push(Err(Error::ConnectionFault(format!(
                        "{role} received a {:?} from {from}, which that link does not carry",
                        msg.message_type()
                    ))));
                    return;
                }
                inbox.push(Ok(Envelope { from, msg }));
            }
            Ok(None) => return,
            Err(e) => {
                if !shutdown.load(Ordering::SeqCst) {
                    inbox.push(Err(e));
                }
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn send(&self, from: Role, to: Role, msg: &RoundMessage) -> Result<()> {
        check_send(from, to, msg)?;
        let bytes = encode_frame(msg)?;
        let conn = self.connection(Link::new(from, to))?;
        let mut w = conn.lock().unwrap();
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::ConnectionFault(format!("send {from} -> {to}: {e}")))
    }

    fn receive(&self, at: Role, timeout: Option<Duration>) -> Result<Envelope> {
        let inbox = self
            .inboxes
            .get(&at)
            .ok_or_else(|| Error::ConnectionFault(format!("{at} is not hosted by this transport")))?;
        let deadline = Instant::now() + timeout.unwrap_or(self.timeout);
        let mut q = inbox.queue.lock().unwrap();
        loop {
            if let Some(item) = q.pop_front() {
                return item;
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout);
            }
            q = inbox.arrived.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    fn try_receive(&self, at: Role) -> Result<Option<Envelope>> {
        let inbox = self
            .inboxes
            .get(&at)
            .ok_or_else(|| Error::ConnectionFault(format!("{at} is not hosted by this transport")))?;
        let item = inbox.queue.lock().unwrap().pop_front();
        item.transpose()
    }

    fn eavesdrop_tap(&self, _link: Link) -> Result<Tap> {
        Err(Error::Unsupported("eavesdropping taps exist only on the simulated transport".into()))
    }

    fn endpoint(&self, role: Role) -> Option<Endpoint> {
        self.book.get(&role).map(|&a| Endpoint {
            role,
            address: Address::Tcp(a),
        })
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for conn in self.outbound.lock().unwrap().values() {
            if let Ok(mut w) = conn.lock() {
                let _ = w.flush();
                let _ = w.get_ref().shutdown(Shutdown::Both);
            }
        }
        for role in self.inboxes.keys() {
            if let Some(addr) = self.book.get(role) {
                // wakes the blocking accept so the thread can see the flag
                let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
            }
        }
        for s in self.accepted.lock().unwrap().iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for h in self.threads.lock().unwrap().drain(..) {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_send_receive() {
        let t = TcpTransport::loopback(&[Role::ParameterServer, Role::Client(0)], PrimeModulus::default()).unwrap();
        let msg = RoundMessage::ModelBroadcast {
            round_id: 1,
            theta: vec![1.0, 2.0, 3.0],
        };
        t.send(Role::ParameterServer, Role::Client(0), &msg).unwrap();
        let env = t.receive(Role::Client(0), Some(Duration::from_secs(5))).unwrap();
        assert_eq!(env.msg, msg);
        assert_eq!(env.from, Role::ParameterServer);
        assert!(matches!(
            t.eavesdrop_tap(Link::new(Role::ParameterServer, Role::Client(0))),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn timeout_without_sender() {
        let t = TcpTransport::loopback(&[Role::ParameterServer], PrimeModulus::default()).unwrap();
        let err = t.receive(Role::ParameterServer, Some(Duration::from_millis(50))).unwrap_err();
        assert!(matches!(err, Error::Timeout));
    }
}
