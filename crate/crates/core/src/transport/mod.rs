//! Message delivery between localities.
//!
//! Two transports share one contract: each envelope is delivered exactly
//! once, and envelopes on one `(src, dst)` link arrive in the order the
//! transport accepted them. The in-process transport hands envelopes
//! directly to the destination's inbound sink. The TCP transport keeps one
//! connection per unordered locality pair and frames envelopes with
//! [`wire`].

mod inproc;
mod tcp;
pub mod wire;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use inproc::InProcessNetwork;

/// Locality index in `[0, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LocalityId(pub u32);

impl LocalityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for LocalityId {
    fn from(i: usize) -> Self {
        LocalityId(i as u32)
    }
}

impl fmt::Display for LocalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One-byte message type selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionTag(pub u8);

impl ActionTag {
    /// Completion acknowledgment.
    pub const ACK: ActionTag = ActionTag(0xFF);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: LocalityId,
    pub dst: LocalityId,
    pub tag: ActionTag,
    /// Unique among in-flight messages from `src`.
    pub request_id: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("locality {0} is disconnected")]
    Disconnected(LocalityId),

    #[error("locality {0} is outside the configured locality count")]
    UnknownLocality(LocalityId),

    #[error("startup failed for locality {locality}: {reason}")]
    Startup { locality: LocalityId, reason: String },

    #[error("invalid transport configuration: {0}")]
    Config(String),

    #[error(transparent)]
    PayloadTooLarge(#[from] wire::PayloadTooLarge),
}

/// Callbacks through which a transport hands inbound traffic to its owner.
pub struct Inbound {
    pub deliver: Box<dyn Fn(Envelope) + Send + Sync>,
    pub disconnected: Box<dyn Fn(LocalityId) + Send + Sync>,
}

/// One locality's view of the transport.
pub trait Transport: Send + Sync {
    fn here(&self) -> LocalityId;
    fn localities(&self) -> usize;
    /// Queues `env` for delivery. Safe to call from many threads; the order
    /// in which concurrent calls return defines per-link FIFO order.
    fn send(&self, env: Envelope) -> Result<(), TransportError>;
    /// Number of live links from this locality to other localities.
    fn peer_links(&self) -> usize;
    fn shutdown(&self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::InProcess => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

/// Artificial latency on one directed in-process link. Delivery order on
/// the link is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkDelay {
    pub src: LocalityId,
    pub dst: LocalityId,
    pub delay: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpConfig {
    /// `host:port` per locality. `None` binds ephemeral loopback ports,
    /// which requires every locality to live in this process.
    pub endpoints: Option<Vec<String>>,
    pub connect_timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportConfig {
    InProcess { link_delays: Vec<LinkDelay> },
    Tcp(TcpConfig),
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig::in_process()
    }
}

impl TransportConfig {
    pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn in_process() -> Self {
        TransportConfig::InProcess {
            link_delays: Vec::new(),
        }
    }

    pub fn tcp_loopback() -> Self {
        TransportConfig::Tcp(TcpConfig {
            endpoints: None,
            connect_timeout: Self::DEFAULT_CONNECT_TIMEOUT,
        })
    }

    pub fn tcp(endpoints: Vec<String>) -> Self {
        TransportConfig::Tcp(TcpConfig {
            endpoints: Some(endpoints),
            connect_timeout: Self::DEFAULT_CONNECT_TIMEOUT,
        })
    }

    pub fn kind(&self) -> TransportKind {
        match self {
            TransportConfig::InProcess { .. } => TransportKind::InProcess,
            TransportConfig::Tcp(_) => TransportKind::Tcp,
        }
    }

    pub fn validate(&self, localities: usize, hosted: &[LocalityId]) -> Result<(), TransportError> {
        let cfg = |m: String| Err(TransportError::Config(m));
        if localities == 0 {
            return cfg("at least one locality is required".into());
        }
        if let Some(h) = hosted.iter().find(|h| h.index() >= localities) {
            return Err(TransportError::UnknownLocality(*h));
        }
        match self {
            TransportConfig::InProcess { link_delays } => {
                if hosted.len() != localities {
                    return cfg("the in-process transport must host every locality".into());
                }
                for d in link_delays {
                    if d.src.index() >= localities || d.dst.index() >= localities {
                        return cfg(format!("link delay {}->{} out of range", d.src, d.dst));
                    }
                }
            }
            TransportConfig::Tcp(TcpConfig { endpoints, .. }) => match endpoints {
                None if hosted.len() != localities => {
                    return cfg("ephemeral tcp endpoints require hosting every locality".into());
                }
                None => {}
                Some(eps) => {
                    if eps.len() != localities {
                        return cfg(format!("{} endpoints given for {localities} localities", eps.len()));
                    }
                    let mut sorted = eps.clone();
                    sorted.sort();
                    sorted.dedup();
                    if sorted.len() != eps.len() {
                        return cfg("endpoints must be distinct".into());
                    }
                }
            },
        }
        Ok(())
    }
}

/// Connects the localities in `hosted` (each paired with its inbound sink)
/// and returns their transport endpoints in the same order.
pub fn connect(
    config: &TransportConfig,
    localities: usize,
    hosted: Vec<(LocalityId, Inbound)>,
) -> Result<Vec<Arc<dyn Transport>>, TransportError> {
    let ids: Vec<LocalityId> = hosted.iter().map(|(h, _)| *h).collect();
    config.validate(localities, &ids)?;
    match config {
        TransportConfig::InProcess { link_delays } => {
            let net = InProcessNetwork::new(localities, link_delays)?;
            Ok(hosted.into_iter().map(|(h, inbound)| net.attach(h, inbound)).collect())
        }
        TransportConfig::Tcp(tcp_cfg) => tcp::connect(tcp_cfg, localities, hosted),
    }
}
