//! Loopback TCP transport with per-link AES-GCM-256.
//!
//! A connection starts with a 12-byte preamble: `u32 sender` and `u64 first
//! counter`, both big-endian. Each frame follows as a `u32` big-endian length
//! and the AEAD ciphertext. Nonces are `sender (4 bytes) || counter (8 bytes)`;
//! the counter is implicit, so a replayed, reordered or tampered frame fails
//! authentication. Counters persist per directed link for the life of the
//! network, so reconnecting never reuses a nonce.

use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use sha2::{Digest, Sha256};

use super::{Endpoint, Network, PartyId, Role, TransportError};

/// Largest accepted plaintext frame.
pub const MAX_FRAME_LEN: usize = 64 << 20;
const TAG_LEN: usize = 16;
const PREAMBLE_LEN: usize = 12;

/// Pre-shared 256-bit keys, one per unordered pair of parties.
///
/// Explicit link keys take precedence; otherwise a key is derived from the
/// master key with SHA-256.
#[derive(Clone, Default)]
pub struct KeyStore {
    master: Option<[u8; 32]>,
    links: HashMap<(PartyId, PartyId), [u8; 32]>,
}

impl KeyStore {
    pub fn from_master(master: [u8; 32]) -> Self {
        Self {
            master: Some(master),
            links: HashMap::new(),
        }
    }

    pub fn insert(&mut self, a: PartyId, b: PartyId, key: [u8; 32]) {
        self.links.insert(ordered(a, b), key);
    }

    pub fn link_key(&self, a: PartyId, b: PartyId) -> Option<[u8; 32]> {
        let pair = ordered(a, b);
        if let Some(key) = self.links.get(&pair) {
            return Some(*key);
        }
        let master = self.master?;
        let mut h = Sha256::new();
        h.update(b"dca link key v1");
        h.update(master);
        h.update(pair.0.raw().to_be_bytes());
        h.update(pair.1.raw().to_be_bytes());
        Some(h.finalize().into())
    }
}

impl std::fmt::Debug for KeyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyStore")
            .field("master", &self.master.map(|_| "<redacted>"))
            .field("links", &self.links.len())
            .finish()
    }
}

fn ordered(a: PartyId, b: PartyId) -> (PartyId, PartyId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn cipher_for(key: &[u8; 32]) -> Aes256Gcm {
    Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(key))
}

fn nonce(sender: PartyId, counter: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&sender.raw().to_be_bytes());
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

/// Encrypts one frame body for the link starting at `sender`.
pub(crate) fn seal(key: &[u8; 32], sender: PartyId, counter: u64, plaintext: &[u8]) -> Vec<u8> {
    cipher_for(key)
        .encrypt(Nonce::from_slice(&nonce(sender, counter)), plaintext)
        .expect("AES-GCM encryption does not fail for in-range inputs")
}

type Inbound = Result<Vec<u8>, TransportError>;
type Inbox = Arc<Mutex<Receiver<Inbound>>>;

struct Shared {
    keys: KeyStore,
    listeners: Mutex<HashMap<PartyId, (SocketAddr, Inbox)>>,
    send_counters: Mutex<HashMap<(PartyId, PartyId), u64>>,
    recv_counters: Mutex<HashMap<(PartyId, PartyId), u64>>,
    stop: AtomicBool,
}

/// Loopback TCP network. Compute nodes and the aggregator get a listener on
/// first use; clients only send.
pub struct TcpNetwork {
    shared: Arc<Shared>,
    pumps: Vec<JoinHandle<()>>,
}

impl TcpNetwork {
    pub fn new(keys: KeyStore) -> Self {
        Self {
            shared: Arc::new(Shared {
                keys,
                listeners: Mutex::new(HashMap::new()),
                send_counters: Mutex::new(HashMap::new()),
                recv_counters: Mutex::new(HashMap::new()),
                stop: AtomicBool::new(false),
            }),
            pumps: Vec::new(),
        }
    }

    pub fn address_of(&self, party: PartyId) -> Option<SocketAddr> {
        self.shared
            .listeners
            .lock()
            .unwrap()
            .get(&party)
            .map(|(addr, _)| *addr)
    }

    fn listen(&mut self, party: PartyId) -> Result<Inbox, TransportError> {
        if let Some((_, inbox)) = self.shared.listeners.lock().unwrap().get(&party) {
            return Ok(Arc::clone(inbox));
        }
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let inbox = Arc::new(Mutex::new(rx));
        let shared = Arc::clone(&self.shared);
        self.pumps.push(
            std::thread::Builder::new()
                .name(format!("tcp-pump-{party}"))
                .spawn(move || pump(listener, party, shared, tx))?,
        );
        self.shared
            .listeners
            .lock()
            .unwrap()
            .insert(party, (addr, Arc::clone(&inbox)));
        Ok(inbox)
    }
}

impl Drop for TcpNetwork {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for handle in self.pumps.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Network for TcpNetwork {
    fn endpoint(&mut self, party: PartyId) -> Result<Box<dyn Endpoint>, TransportError> {
        let inbox = match party.role() {
            Role::Client(_) => None,
            _ => Some(self.listen(party)?),
        };
        Ok(Box::new(TcpEndpoint {
            party,
            shared: Arc::clone(&self.shared),
            links: HashMap::new(),
            inbox,
        }))
    }
}

struct OutLink {
    stream: TcpStream,
    key: [u8; 32],
    counter: u64,
}

struct TcpEndpoint {
    party: PartyId,
    shared: Arc<Shared>,
    links: HashMap<PartyId, OutLink>,
    inbox: Option<Inbox>,
}

impl TcpEndpoint {
    fn link(&mut self, to: PartyId) -> Result<&mut OutLink, TransportError> {
        if !self.links.contains_key(&to) {
            let key = self
                .shared
                .keys
                .link_key(self.party, to)
                .ok_or(TransportError::MissingKey(self.party, to))?;
            let addr = self
                .shared
                .listeners
                .lock()
                .unwrap()
                .get(&to)
                .map(|(addr, _)| *addr)
                .ok_or(TransportError::UnknownPeer(to))?;
            let counter = *self
                .shared
                .send_counters
                .lock()
                .unwrap()
                .get(&(self.party, to))
                .unwrap_or(&0);
            let mut stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let mut preamble = [0u8; PREAMBLE_LEN];
            preamble[..4].copy_from_slice(&self.party.raw().to_be_bytes());
            preamble[4..].copy_from_slice(&counter.to_be_bytes());
            stream.write_all(&preamble)?;
            self.links.insert(
                to,
                OutLink {
                    stream,
                    key,
                    counter,
                },
            );
        }
        Ok(self.links.get_mut(&to).expect("inserted above"))
    }
}

impl Endpoint for TcpEndpoint {
    fn party(&self) -> PartyId {
        self.party
    }

    fn send(&mut self, to: PartyId, frame: &[u8]) -> Result<(), TransportError> {
        if frame.len() > MAX_FRAME_LEN {
            return Err(TransportError::FrameTooLarge(frame.len()));
        }
        let from = self.party;
        let shared = Arc::clone(&self.shared);
        let link = self.link(to)?;
        let ciphertext = seal(&link.key, from, link.counter, frame);
        let mut buf = Vec::with_capacity(4 + ciphertext.len());
        buf.extend_from_slice(&(ciphertext.len() as u32).to_be_bytes());
        buf.extend_from_slice(&ciphertext);
        link.counter += 1;
        shared
            .send_counters
            .lock()
            .unwrap()
            .insert((from, to), link.counter);
        if let Err(e) = link.stream.write_all(&buf) {
            self.links.remove(&to);
            return Err(e.into());
        }
        Ok(())
    }

    fn recv_with_timeout(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let inbox = self.inbox.as_ref().ok_or(TransportError::ChannelClosed)?;
        let rx = inbox.lock().unwrap();
        match rx.recv_timeout(timeout) {
            Ok(inbound) => inbound,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::ChannelClosed),
        }
    }
}

struct LinkState {
    from: PartyId,
    key: [u8; 32],
    counter: u64,
}

struct Conn {
    stream: TcpStream,
    buf: Vec<u8>,
    link: Option<LinkState>,
    closed: bool,
}

impl Conn {
    /// Consumes complete frames from the buffer. Returns false if the
    /// connection must be dropped.
    fn process(&mut self, me: PartyId, shared: &Shared, tx: &Sender<Inbound>) -> bool {
        let mut pos = 0;
        if self.link.is_none() {
            if self.buf.len() < PREAMBLE_LEN {
                return true;
            }
            let from = PartyId::from_raw(u32::from_be_bytes(self.buf[..4].try_into().unwrap()));
            let start = u64::from_be_bytes(self.buf[4..PREAMBLE_LEN].try_into().unwrap());
            let Some(key) = shared.keys.link_key(from, me) else {
                let _ = tx.send(Err(TransportError::MissingKey(from, me)));
                return false;
            };
            let seen = *shared
                .recv_counters
                .lock()
                .unwrap()
                .get(&(from, me))
                .unwrap_or(&0);
            if start < seen {
                // counter rewind means a replayed connection
                let _ = tx.send(Err(TransportError::AuthenticationFailed { from }));
                return false;
            }
            self.link = Some(LinkState {
                from,
                key,
                counter: start,
            });
            pos = PREAMBLE_LEN;
        }
        let link = self.link.as_mut().expect("set above");
        let mut ok = true;
        while self.buf.len() - pos >= 4 {
            let len = u32::from_be_bytes(self.buf[pos..pos + 4].try_into().unwrap()) as usize;
            if len > MAX_FRAME_LEN + TAG_LEN {
                let _ = tx.send(Err(TransportError::FrameTooLarge(len)));
                ok = false;
                break;
            }
            if self.buf.len() - pos - 4 < len {
                break;
            }
            let ciphertext = &self.buf[pos + 4..pos + 4 + len];
            let opened = cipher_for(&link.key).decrypt(
                Nonce::from_slice(&nonce(link.from, link.counter)),
                ciphertext,
            );
            pos += 4 + len;
            match opened {
                Ok(plaintext) => {
                    link.counter += 1;
                    shared
                        .recv_counters
                        .lock()
                        .unwrap()
                        .insert((link.from, me), link.counter);
                    if tx.send(Ok(plaintext)).is_err() {
                        ok = false;
                        break;
                    }
                }
                Err(_) => {
                    let _ = tx.send(Err(TransportError::AuthenticationFailed {
                        from: link.from,
                    }));
                    ok = false;
                    break;
                }
            }
        }
        self.buf.drain(..pos);
        ok
    }
}

fn pump(listener: TcpListener, me: PartyId, shared: Arc<Shared>, tx: Sender<Inbound>) {
    let mut conns: Vec<Conn> = Vec::new();
    let mut chunk = vec![0u8; 64 * 1024];
    while !shared.stop.load(Ordering::SeqCst) {
        let mut progress = false;
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    if stream.set_nonblocking(true).is_ok() {
                        conns.push(Conn {
                            stream,
                            buf: Vec::new(),
                            link: None,
                            closed: false,
                        });
                        progress = true;
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(_) => break,
            }
        }
        for conn in conns.iter_mut() {
            loop {
                match conn.stream.read(&mut chunk) {
                    Ok(0) => {
                        conn.closed = true;
                        break;
                    }
                    Ok(n) => {
                        conn.buf.extend_from_slice(&chunk[..n]);
                        progress = true;
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                    Err(_) => {
                        conn.closed = true;
                        break;
                    }
                }
            }
            if !conn.process(me, &shared, &tx) {
                conn.closed = true;
            }
        }
        conns.retain(|c| !c.closed);
        if !progress {
            std::thread::sleep(Duration::from_micros(200));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn keys() -> KeyStore {
        KeyStore::from_master([7u8; 32])
    }

    #[test]
    fn link_keys_are_symmetric_and_distinct() {
        let ks = keys();
        let a = PartyId::client(0);
        let b = PartyId::compute(0);
        assert_eq!(ks.link_key(a, b), ks.link_key(b, a));
        assert_ne!(ks.link_key(a, b), ks.link_key(PartyId::client(1), b));
        let mut explicit = KeyStore::default();
        assert!(explicit.link_key(a, b).is_none());
        explicit.insert(b, a, [1; 32]);
        assert_eq!(explicit.link_key(a, b), Some([1; 32]));
    }

    #[test]
    fn random_payload_round_trip() {
        let mut net = TcpNetwork::new(keys());
        let mut rx = net.endpoint(PartyId::compute(0)).unwrap();
        let mut tx = net.endpoint(PartyId::client(4)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let payload: Vec<u8> = (0..1024).map(|_| rng.random()).collect();
        tx.send(PartyId::compute(0), &payload).unwrap();
        tx.send(PartyId::compute(0), b"second").unwrap();
        assert_eq!(
            rx.recv_with_timeout(Duration::from_secs(5)).unwrap(),
            payload
        );
        assert_eq!(
            rx.recv_with_timeout(Duration::from_secs(5)).unwrap(),
            b"second"
        );
    }

    #[test]
    fn reconnect_continues_counter() {
        let mut net = TcpNetwork::new(keys());
        let mut rx = net.endpoint(PartyId::compute(1)).unwrap();
        for round in 0..3u8 {
            let mut tx = net.endpoint(PartyId::client(0)).unwrap();
            tx.send(PartyId::compute(1), &[round]).unwrap();
            assert_eq!(
                rx.recv_with_timeout(Duration::from_secs(5)).unwrap(),
                vec![round]
            );
        }
        let counters = net.shared.send_counters.lock().unwrap();
        assert_eq!(counters[&(PartyId::client(0), PartyId::compute(1))], 3);
    }

    #[test]
    fn tampered_frame_is_rejected() {
        let ks = keys();
        let mut net = TcpNetwork::new(ks.clone());
        let mut rx = net.endpoint(PartyId::compute(0)).unwrap();
        let addr = net.address_of(PartyId::compute(0)).unwrap();
        let from = PartyId::client(9);
        let key = ks.link_key(from, PartyId::compute(0)).unwrap();
        let mut ct = seal(&key, from, 0, b"attack at dawn");
        ct[3] ^= 0x40;
        let mut raw = TcpStream::connect(addr).unwrap();
        let mut bytes = from.raw().to_be_bytes().to_vec();
        bytes.extend_from_slice(&0u64.to_be_bytes());
        bytes.extend_from_slice(&(ct.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&ct);
        raw.write_all(&bytes).unwrap();
        let err = rx.recv_with_timeout(Duration::from_secs(5)).unwrap_err();
        assert!(matches!(err, TransportError::AuthenticationFailed { from: f } if f == from));
    }

    #[test]
    fn replayed_connection_is_rejected() {
        let ks = keys();
        let mut net = TcpNetwork::new(ks.clone());
        let mut rx = net.endpoint(PartyId::compute(0)).unwrap();
        let mut tx = net.endpoint(PartyId::client(1)).unwrap();
        tx.send(PartyId::compute(0), b"once").unwrap();
        rx.recv_with_timeout(Duration::from_secs(5)).unwrap();

        // replay the same (counter 0) frame on a fresh connection
        let addr = net.address_of(PartyId::compute(0)).unwrap();
        let key = ks
            .link_key(PartyId::client(1), PartyId::compute(0))
            .unwrap();
        let ct = seal(&key, PartyId::client(1), 0, b"once");
        let mut raw = TcpStream::connect(addr).unwrap();
        let mut bytes = 1u32.to_be_bytes().to_vec();
        bytes.extend_from_slice(&0u64.to_be_bytes());
        bytes.extend_from_slice(&(ct.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&ct);
        raw.write_all(&bytes).unwrap();
        assert!(matches!(
            rx.recv_with_timeout(Duration::from_secs(5)),
            Err(TransportError::AuthenticationFailed { .. })
        ));
    }

    #[test]
    fn missing_key_and_unknown_peer() {
        let mut net = TcpNetwork::new(KeyStore::default());
        let _rx = net.endpoint(PartyId::compute(0)).unwrap();
        let mut tx = net.endpoint(PartyId::client(0)).unwrap();
        assert!(matches!(
            tx.send(PartyId::compute(0), b"x"),
            Err(TransportError::MissingKey(..))
        ));
        let mut net = TcpNetwork::new(keys());
        let mut tx = net.endpoint(PartyId::client(0)).unwrap();
        assert!(matches!(
            tx.send(PartyId::compute(5), b"x"),
            Err(TransportError::UnknownPeer(_))
        ));
    }

    #[test]
    fn closed_network_reports_channel_closed() {
        let mut net = TcpNetwork::new(keys());
        let mut rx = net.endpoint(PartyId::compute(0)).unwrap();
        let mut client = net.endpoint(PartyId::client(0)).unwrap();
        drop(net);
        assert!(matches!(
            rx.recv_with_timeout(Duration::from_millis(100)),
            Err(TransportError::ChannelClosed)
        ));
        assert!(matches!(
            client.recv_with_timeout(Duration::from_millis(10)),
            Err(TransportError::ChannelClosed)
        ));
    }
}
