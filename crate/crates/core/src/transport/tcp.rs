//! TCP transport: one connection per unordered locality pair.
//!
//! Every locality listens on its endpoint. For each pair `i < j`, `i`
//! connects to `j` and sends a 16-byte hello (magic `AMTH`, u32 version,
//! u32 sender id, u32 locality count, little-endian). Each link gets a
//! writer thread that batches queued frames between flushes and a reader
//! thread that decodes frames into the inbound sink.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::wire::{self, read_frame};
use super::{Envelope, Inbound, LocalityId, TcpConfig, Transport, TransportError};

const HELLO_MAGIC: &[u8; 4] = b"AMTH";
const HELLO_VERSION: u32 = 1;
const HELLO_LEN: usize = 16;
const WRITE_BUFFER: usize = 64 * 1024;

pub(super) fn connect(
    cfg: &TcpConfig,
    localities: usize,
    hosted: Vec<(LocalityId, Inbound)>,
) -> Result<Vec<Arc<dyn Transport>>, TransportError> {
    let deadline = Instant::now() + cfg.connect_timeout;
    let startup = |locality: LocalityId, reason: String| TransportError::Startup { locality, reason };

    let mut addrs: Vec<Option<SocketAddr>> = match &cfg.endpoints {
        Some(eps) => eps
            .iter()
            .enumerate()
            .map(|(i, ep)| {
                ep.to_socket_addrs()
                    .map_err(|e| startup(i.into(), format!("resolve {ep}: {e}")))?
                    .next()
                    .map(Some)
                    .ok_or_else(|| startup(i.into(), format!("{ep} resolves to no address")))
            })
            .collect::<Result<_, _>>()?,
        None => vec![None; localities],
    };

    let mut listeners = Vec::new();
    for (h, _) in &hosted {
        let bind_to = addrs[h.index()].unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 0)));
        let listener = TcpListener::bind(bind_to).map_err(|e| startup(*h, format!("bind {bind_to}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| startup(*h, format!("local address: {e}")))?;
        addrs[h.index()] = Some(local);
        listeners.push(listener);
    }
    let addrs: Vec<SocketAddr> = addrs.into_iter().map(|a| a.expect("all addresses known")).collect();

    // Lower id connects.
    let mut streams: Vec<Vec<Option<TcpStream>>> = hosted.iter().map(|_| vec_of_none(localities)).collect();
    for (k, (h, _)) in hosted.iter().enumerate() {
        for j in h.index() + 1..localities {
            let mut s = connect_with_retry(addrs[j], deadline)
                .map_err(|e| startup(j.into(), format!("connect {}: {e}", addrs[j])))?;
            let mut hello = Vec::with_capacity(HELLO_LEN);
            hello.extend_from_slice(HELLO_MAGIC);
            hello.extend_from_slice(&HELLO_VERSION.to_le_bytes());
            hello.extend_from_slice(&h.0.to_le_bytes());
            hello.extend_from_slice(&(localities as u32).to_le_bytes());
            s.write_all(&hello)
                .map_err(|e| startup(j.into(), format!("hello: {e}")))?;
            streams[k][j] = Some(s);
        }
    }
    for (k, ((h, _), listener)) in hosted.iter().zip(&listeners).enumerate() {
        listener.set_nonblocking(true).map_err(|e| startup(*h, e.to_string()))?;
        let mut missing = h.index();
        while missing > 0 {
            let (mut s, _) = match listener.accept() {
                Ok(x) => x,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let first = (0..h.index()).find(|&i| streams[k][i].is_none()).unwrap();
                        return Err(startup(first.into(), format!("no connection to locality {h}")));
                    }
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(startup(*h, format!("accept: {e}"))),
            };
            s.set_nonblocking(false).map_err(|e| startup(*h, e.to_string()))?;
            s.set_read_timeout(Some(
                deadline
                    .saturating_duration_since(Instant::now())
                    .max(Duration::from_millis(10)),
            ))
            .map_err(|e| startup(*h, e.to_string()))?;
            let mut hello = [0u8; HELLO_LEN];
            s.read_exact(&mut hello)
                .map_err(|e| startup(*h, format!("reading hello: {e}")))?;
            let peer = u32::from_le_bytes(hello[8..12].try_into().unwrap()) as usize;
            let peer_l = u32::from_le_bytes(hello[12..16].try_into().unwrap()) as usize;
            let version = u32::from_le_bytes(hello[4..8].try_into().unwrap());
            if &hello[0..4] != HELLO_MAGIC || version != HELLO_VERSION || peer_l != localities {
                return Err(startup(*h, "peer sent an incompatible hello".into()));
            }
            if peer >= h.index() || streams[k][peer].is_some() {
                return Err(startup(peer.into(), format!("unexpected connection to locality {h}")));
            }
            s.set_read_timeout(None).map_err(|e| startup(*h, e.to_string()))?;
            streams[k][peer] = Some(s);
            missing -= 1;
        }
    }

    let mut out: Vec<Arc<dyn Transport>> = Vec::new();
    for ((h, inbound), row) in hosted.into_iter().zip(streams) {
        let inbound = Arc::new(inbound);
        let closing = Arc::new(AtomicBool::new(false));
        let mut links = Vec::with_capacity(localities);
        for (peer, stream) in row.into_iter().enumerate() {
            links.push(match stream {
                Some(s) => Some(
                    Link::start(h, peer.into(), s, Arc::clone(&inbound), Arc::clone(&closing))
                        .map_err(|e| startup(h, format!("link to {peer}: {e}")))?,
                ),
                None => None,
            });
        }
        out.push(Arc::new(TcpEndpoint {
            here: h,
            links,
            inbound,
            closing,
        }));
    }
    Ok(out)
}

fn vec_of_none<T>(n: usize) -> Vec<Option<T>> {
    (0..n).map(|_| None).collect()
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> std::io::Result<TcpStream> {
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        let attempt = if remaining.is_zero() {
            Err(std::io::Error::new(ErrorKind::TimedOut, "connect timeout"))
        } else {
            TcpStream::connect_timeout(&addr, remaining)
        };
        match attempt {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

struct Link {
    tx: Sender<Option<Envelope>>,
    alive: Arc<AtomicBool>,
    stream: TcpStream,
    writer: Mutex<Option<JoinHandle<()>>>,
    reader: Mutex<Option<JoinHandle<()>>>,
}

impl Link {
    fn start(
        here: LocalityId,
        peer: LocalityId,
        stream: TcpStream,
        inbound: Arc<Inbound>,
        closing: Arc<AtomicBool>,
    ) -> std::io::Result<Link> {
        stream.set_nodelay(true)?;
        let alive = Arc::new(AtomicBool::new(true));
        let (tx, rx) = unbounded();

        let w_stream = stream.try_clone()?;
        let w_alive = Arc::clone(&alive);
        let writer = thread::Builder::new()
            .name(format!("tcp-w-{here}-{peer}"))
            .spawn(move || write_loop(w_stream, rx, w_alive))?;

        let r_stream = stream.try_clone()?;
        let r_alive = Arc::clone(&alive);
        let reader = thread::Builder::new()
            .name(format!("tcp-r-{here}-{peer}"))
            .spawn(move || {
                let mut reader = BufReader::with_capacity(WRITE_BUFFER, r_stream);
                while let Ok(Some(env)) = read_frame(&mut reader) {
                    (inbound.deliver)(env);
                }
                r_alive.store(false, Ordering::Release);
                if !closing.load(Ordering::Acquire) {
                    log::debug!("locality {here}: link to {peer} closed");
                    (inbound.disconnected)(peer);
                }
            })?;

        Ok(Link {
            tx,
            alive,
            stream,
            writer: Mutex::new(Some(writer)),
            reader: Mutex::new(Some(reader)),
        })
    }
}

fn write_loop(stream: TcpStream, rx: Receiver<Option<Envelope>>, alive: Arc<AtomicBool>) {
    let mut w = BufWriter::with_capacity(WRITE_BUFFER, stream);
    let mut buf = Vec::with_capacity(256);
    let mut write = |env: &Envelope, w: &mut BufWriter<TcpStream>| -> std::io::Result<()> {
        buf.clear();
        wire::encode_into(env, &mut buf).map_err(|e| std::io::Error::new(ErrorKind::InvalidInput, e))?;
        w.write_all(&buf)
    };
    'outer: while let Ok(Some(env)) = rx.recv() {
        if write(&env, &mut w).is_err() {
            break;
        }
        loop {
            match rx.try_recv() {
                Ok(Some(env)) => {
                    if write(&env, &mut w).is_err() {
                        break 'outer;
                    }
                }
                Ok(None) => {
                    let _ = w.flush();
                    return;
                }
                Err(_) => break,
            }
        }
        if w.flush().is_err() {
            break;
        }
    }
    let _ = w.flush();
    alive.store(false, Ordering::Release);
}

struct TcpEndpoint {
    here: LocalityId,
    links: Vec<Option<Link>>,
    inbound: Arc<Inbound>,
    closing: Arc<AtomicBool>,
}

impl Transport for TcpEndpoint {
    fn here(&self) -> LocalityId {
        self.here
    }

    fn localities(&self) -> usize {
        self.links.len()
    }

    fn send(&self, env: Envelope) -> Result<(), TransportError> {
        let dst = env.dst;
        if dst.index() >= self.links.len() {
            return Err(TransportError::UnknownLocality(dst));
        }
        if self.closing.load(Ordering::Acquire) {
            return Err(TransportError::Disconnected(self.here));
        }
        if dst == self.here {
            // Loopback still goes through the codec.
            let frame = wire::encode(&env)?;
            let env = wire::decode(&frame).expect("own frame decodes");
            (self.inbound.deliver)(env);
            return Ok(());
        }
        let link = self.links[dst.index()].as_ref().expect("full mesh");
        if !link.alive.load(Ordering::Acquire) {
            return Err(TransportError::Disconnected(dst));
        }
        if env.payload.len() > wire::MAX_PAYLOAD_LEN {
            return Err(wire::PayloadTooLarge(env.payload.len()).into());
        }
        link.tx.send(Some(env)).map_err(|_| TransportError::Disconnected(dst))
    }

    fn peer_links(&self) -> usize {
        self.links
            .iter()
            .flatten()
            .filter(|l| l.alive.load(Ordering::Acquire))
            .count()
    }

    fn shutdown(&self) {
        if self.closing.swap(true, Ordering::AcqRel) {
            return;
        }
        for link in self.links.iter().flatten() {
            let _ = link.tx.send(None);
            if let Some(w) = link.writer.lock().take() {
                let _ = w.join();
            }
            let _ = link.stream.shutdown(Shutdown::Both);
            link.alive.store(false, Ordering::Release);
            if let Some(r) = link.reader.lock().take() {
                let _ = r.join();
            }
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}
