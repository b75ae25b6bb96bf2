//! Asynchronous many-task runtime.
//!
//! A [`Runtime`] hosts one or more localities, each with a pool of worker
//! threads that execute action handlers, plus one driver thread per locality
//! supplied by [`Runtime::run_spmd`]. Drivers issue actions with
//! [`Ctx::remote_action`], wait on the returned [`CompletionHandle`]s, and
//! synchronize with [`Driver::barrier`] and [`Driver::all_reduce_sum`].
//! Handlers run on workers and must not block; they spawn further actions
//! and return.
//!
//! Action tags `0x00..=0xEF` are available to applications. The rest are
//! reserved for the runtime.

mod collective;
mod handle;
mod partition;
mod vector;

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::thread::{self, JoinHandle};

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;
use thiserror::Error;

use crate::transport::{self, Envelope, Inbound, Transport, TransportConfig, TransportError, TransportKind};
pub use crate::transport::{ActionTag, LocalityId};
use collective::Collectives;
pub use handle::{wait_all, CompletionHandle, Hold};
use handle::{Activation, Outcome, RootCounter, Route};
pub use partition::PartitionMap;
use vector::VectorSource;
pub use vector::{CellValue, PartitionedVector};

/// First tag reserved for runtime-internal actions.
pub const FIRST_RESERVED_TAG: u8 = 0xF0;

const MAX_INLINE_ACK_DEPTH: u32 = 32;

thread_local! {
    static ACK_DEPTH: std::cell::Cell<u32> = const { std::cell::Cell::new(0) };
}

pub(crate) const BARRIER_TAG: ActionTag = ActionTag(0xF0);
pub(crate) const REDUCE_TAG: ActionTag = ActionTag(0xF1);
pub(crate) const FETCH_TAG: ActionTag = ActionTag(0xF2);

const PENDING_SHARDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("locality {here} may not access index {index} of vector {vector}, owned by locality {owner}")]
    OwnershipViolation {
        vector: u32,
        index: usize,
        owner: LocalityId,
        here: LocalityId,
    },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("locality {0} is not hosted in this process")]
    NotHosted(LocalityId),

    #[error("no handler registered for action tag {0:#04x}")]
    UnknownAction(u8),

    #[error("action tag {0:#04x} is reserved for the runtime")]
    ReservedTag(u8),

    #[error("action tag {0:#04x} registered twice")]
    DuplicateAction(u8),

    #[error("locality {0} does not exist")]
    UnknownLocality(LocalityId),

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("action failed on locality {locality}: {message}")]
    Remote { locality: LocalityId, message: String },

    #[error("{0}")]
    Action(String),

    #[error("action handler panicked: {0}")]
    Panicked(String),

    #[error("{0} may not block inside an action handler")]
    BlockingInHandler(&'static str),

    #[error("{0} is only available inside an action handler")]
    NotInHandler(&'static str),

    #[error("collective operation failed: {0}")]
    CollectiveFailed(String),

    #[error("malformed message: {0}")]
    Protocol(String),

    #[error("runtime is shut down")]
    Shutdown,

    #[error("invalid runtime configuration: {0}")]
    Config(String),
}

pub type Handler = Arc<dyn Fn(&Ctx<'_>, &[u8]) -> Result<Vec<u8>, RuntimeError> + Send + Sync>;

/// Which localities this process hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hosting {
    All,
    Only(LocalityId),
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub localities: usize,
    /// Worker threads per locality.
    pub workers: usize,
    pub transport: TransportConfig,
    pub hosting: Hosting,
}

impl RuntimeConfig {
    pub fn new(localities: usize) -> Self {
        RuntimeConfig {
            localities,
            workers: default_workers(localities),
            transport: TransportConfig::in_process(),
            hosting: Hosting::All,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_transport(mut self, transport: TransportConfig) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_hosting(mut self, hosting: Hosting) -> Self {
        self.hosting = hosting;
        self
    }

    pub fn hosted(&self) -> Vec<LocalityId> {
        match self.hosting {
            Hosting::All => (0..self.localities).map(LocalityId::from).collect(),
            Hosting::Only(h) => vec![h],
        }
    }
}

/// Available cores divided evenly among `localities`, at least one.
pub fn default_workers(localities: usize) -> usize {
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    (cores / localities.max(1)).max(1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocalityStats {
    /// Actions sent to other localities, not counting ACKs.
    pub remote_actions: u64,
    /// Actions dispatched to this locality's own queue.
    pub local_actions: u64,
}

struct Common {
    localities: usize,
    workers: usize,
    handlers: Vec<Option<Handler>>,
    vectors: Vec<Arc<dyn VectorSource>>,
}

impl Common {
    fn handler(&self, tag: ActionTag) -> Option<&Handler> {
        self.handlers[tag.0 as usize].as_ref()
    }
}

/// Registers vectors and actions before the runtime starts.
pub struct RuntimeBuilder {
    config: RuntimeConfig,
    hosted: Vec<LocalityId>,
    handlers: Vec<Option<Handler>>,
    vectors: Vec<Arc<dyn VectorSource>>,
}

impl RuntimeBuilder {
    pub fn new(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        if config.localities == 0 {
            return Err(RuntimeError::Config("at least one locality is required".into()));
        }
        if config.localities > u32::MAX as usize {
            return Err(RuntimeError::Config("too many localities".into()));
        }
        if config.workers == 0 {
            return Err(RuntimeError::Config(
                "at least one worker per locality is required".into(),
            ));
        }
        let hosted = config.hosted();
        if let Some(h) = hosted.iter().find(|h| h.index() >= config.localities) {
            return Err(RuntimeError::UnknownLocality(*h));
        }
        config.transport.validate(config.localities, &hosted)?;
        Ok(RuntimeBuilder {
            config,
            hosted,
            handlers: (0..256).map(|_| None).collect(),
            vectors: Vec::new(),
        })
    }

    pub fn localities(&self) -> usize {
        self.config.localities
    }

    /// Localities that will run in this process.
    pub fn hosted(&self) -> &[LocalityId] {
        &self.hosted
    }

    pub fn partition(&self, n: usize) -> PartitionMap {
        PartitionMap::new(n, self.config.localities)
    }

    /// Creates a length-`n` vector with every cell set to `fill`.
    pub fn vector<T: CellValue>(&mut self, n: usize, fill: T) -> PartitionedVector<T> {
        let map = self.partition(n);
        let (v, source) = PartitionedVector::new(self.vectors.len() as u32, map, &self.hosted, fill);
        self.vectors.push(source);
        v
    }

    pub fn register<F>(&mut self, tag: ActionTag, handler: F) -> Result<(), RuntimeError>
    where
        F: Fn(&Ctx<'_>, &[u8]) -> Result<Vec<u8>, RuntimeError> + Send + Sync + 'static,
    {
        if tag.0 >= FIRST_RESERVED_TAG {
            return Err(RuntimeError::ReservedTag(tag.0));
        }
        let slot = &mut self.handlers[tag.0 as usize];
        if slot.is_some() {
            return Err(RuntimeError::DuplicateAction(tag.0));
        }
        *slot = Some(Arc::new(handler));
        Ok(())
    }

    /// Connects the transport and starts the worker pools.
    pub fn start(mut self) -> Result<Runtime, RuntimeError> {
        self.handlers[BARRIER_TAG.0 as usize] = Some(Arc::new(|ctx: &Ctx<'_>, p: &[u8]| {
            ctx.loc.collectives.barrier_arrive(ctx, p)
        }));
        self.handlers[REDUCE_TAG.0 as usize] = Some(Arc::new(|ctx: &Ctx<'_>, p: &[u8]| {
            ctx.loc.collectives.reduce_arrive(ctx, p)
        }));
        self.handlers[FETCH_TAG.0 as usize] = Some(Arc::new(|ctx: &Ctx<'_>, p: &[u8]| {
            let (id, range) = vector::decode_fetch(p)?;
            let v = ctx
                .loc
                .common
                .vectors
                .get(id as usize)
                .ok_or_else(|| RuntimeError::Protocol(format!("unknown vector {id}")))?;
            v.fetch(ctx.here(), range)
        }));

        let common = Arc::new(Common {
            localities: self.config.localities,
            workers: self.config.workers,
            handlers: self.handlers,
            vectors: self.vectors,
        });

        let mut locs = Vec::new();
        let mut receivers = Vec::new();
        let mut inbounds = Vec::new();
        for &h in &self.hosted {
            let (tx, rx) = unbounded();
            let loc = Arc::new(LocalityState {
                id: h,
                common: Arc::clone(&common),
                transport: OnceLock::new(),
                queue: tx.clone(),
                pending: (0..PENDING_SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
                next_request: AtomicU64::new(0),
                roots: Arc::new(RootCounter::default()),
                collectives: Collectives::default(),
                barrier_epoch: AtomicU64::new(0),
                reduce_epoch: AtomicU64::new(0),
                closing: AtomicBool::new(false),
                remote_actions: AtomicU64::new(0),
                local_actions: AtomicU64::new(0),
                links: (0..self.config.localities).map(|_| LinkState::default()).collect(),
            });
            let weak: Weak<LocalityState> = Arc::downgrade(&loc);
            let weak_in = weak.clone();
            inbounds.push((
                h,
                Inbound {
                    deliver: Box::new(move |env| {
                        let Some(loc) = weak_in.upgrade() else {
                            return;
                        };
                        // Acks only complete handles, so they skip the
                        // worker queue unless they would nest too deeply.
                        if env.tag == ActionTag::ACK && ACK_DEPTH.get() < MAX_INLINE_ACK_DEPTH {
                            ACK_DEPTH.set(ACK_DEPTH.get() + 1);
                            loc.on_ack(env);
                            ACK_DEPTH.set(ACK_DEPTH.get() - 1);
                            return;
                        }
                        if let Some(link) = loc.links.get(env.src.index()) {
                            link.queued.fetch_add(1, Ordering::SeqCst);
                        }
                        let _ = tx.send(Job::Remote(env));
                    }),
                    disconnected: Box::new(move |peer| {
                        if let Some(loc) = weak.upgrade() {
                            loc.on_disconnect(peer);
                        }
                    }),
                },
            ));
            locs.push(loc);
            receivers.push(rx);
        }

        let endpoints = transport::connect(&self.config.transport, self.config.localities, inbounds)?;
        for (loc, ep) in locs.iter().zip(endpoints) {
            let _ = loc.transport.set(ep);
        }

        let mut workers = Vec::new();
        for (loc, rx) in locs.iter().zip(receivers) {
            for w in 0..self.config.workers {
                let loc = Arc::clone(loc);
                let rx = rx.clone();
                let spawned = thread::Builder::new()
                    .name(format!("loc{}-w{w}", loc.id))
                    .spawn(move || worker_loop(loc, rx));
                match spawned {
                    Ok(j) => workers.push(j),
                    Err(e) => {
                        let rt = Runtime {
                            config: self.config.clone(),
                            locs: locs.clone(),
                            workers: Mutex::new(workers),
                            stopped: AtomicBool::new(false),
                        };
                        rt.shutdown();
                        return Err(RuntimeError::Config(format!("spawn worker: {e}")));
                    }
                }
            }
        }

        Ok(Runtime {
            config: self.config,
            locs,
            workers: Mutex::new(workers),
            stopped: AtomicBool::new(false),
        })
    }
}

enum Job {
    Remote(Envelope),
    Local {
        tag: ActionTag,
        payload: Vec<u8>,
        activation: Arc<Activation>,
    },
    Stop,
}

fn worker_loop(loc: Arc<LocalityState>, rx: Receiver<Job>) {
    while let Ok(job) = rx.recv() {
        match job {
            Job::Stop => break,
            Job::Remote(env) => {
                let src = env.src;
                if env.tag == ActionTag::ACK {
                    loc.on_ack(env);
                } else {
                    let act = Activation::new(
                        Route::Remote {
                            to: env.src,
                            request_id: env.request_id,
                        },
                        Arc::clone(&loc),
                    );
                    loc.run_handler(env.tag, &env.payload, act);
                }
                loc.inbound_done(src);
            }
            Job::Local {
                tag,
                payload,
                activation,
            } => loc.run_handler(tag, &payload, activation),
        }
    }
}

struct Pending {
    dst: LocalityId,
    handle: CompletionHandle,
}

pub(crate) struct LocalityState {
    id: LocalityId,
    common: Arc<Common>,
    transport: OnceLock<Arc<dyn Transport>>,
    queue: Sender<Job>,
    pending: Vec<Mutex<HashMap<u64, Pending>>>,
    next_request: AtomicU64,
    roots: Arc<RootCounter>,
    collectives: Collectives,
    barrier_epoch: AtomicU64,
    reduce_epoch: AtomicU64,
    closing: AtomicBool,
    remote_actions: AtomicU64,
    local_actions: AtomicU64,
    links: Vec<LinkState>,
}

/// Inbound bookkeeping for one peer. A lost link fails the peer's pending
/// requests only once every job already received from it has run, so an
/// ack that arrived just before the disconnect still counts.
#[derive(Default)]
struct LinkState {
    queued: AtomicUsize,
    lost: AtomicBool,
    failed: AtomicBool,
}

impl LocalityState {
    fn transport(&self) -> &Arc<dyn Transport> {
        self.transport.get().expect("transport installed before use")
    }

    fn shard(&self, request_id: u64) -> &Mutex<HashMap<u64, Pending>> {
        &self.pending[request_id as usize % PENDING_SHARDS]
    }

    fn run_handler(self: &Arc<Self>, tag: ActionTag, payload: &[u8], act: Arc<Activation>) {
        let result = match self.common.handler(tag) {
            None => Err(RuntimeError::UnknownAction(tag.0)),
            Some(h) => {
                let ctx = Ctx {
                    loc: self,
                    activation: Some(&act),
                };
                panic::catch_unwind(AssertUnwindSafe(|| h(&ctx, payload)))
                    .unwrap_or_else(|p| Err(RuntimeError::Panicked(panic_message(&*p))))
            }
        };
        act.body_done(result);
    }

    fn spawn(
        self: &Arc<Self>,
        parent: Option<&Arc<Activation>>,
        dst: LocalityId,
        tag: ActionTag,
        payload: Vec<u8>,
    ) -> Result<CompletionHandle, RuntimeError> {
        if dst.index() >= self.common.localities {
            return Err(RuntimeError::UnknownLocality(dst));
        }
        if tag == ActionTag::ACK || self.common.handler(tag).is_none() {
            return Err(RuntimeError::UnknownAction(tag.0));
        }
        if self.closing.load(Ordering::Acquire) {
            return Err(RuntimeError::Shutdown);
        }
        let handle = match parent {
            Some(p) => CompletionHandle::new(Some(Arc::clone(p)), None),
            None => CompletionHandle::new(None, Some(Arc::clone(&self.roots))),
        };
        if dst == self.id {
            self.local_actions.fetch_add(1, Ordering::Relaxed);
            let activation = Activation::new(Route::Local(handle.clone()), Arc::clone(self));
            if self
                .queue
                .send(Job::Local {
                    tag,
                    payload,
                    activation,
                })
                .is_err()
            {
                handle.complete(Err(RuntimeError::Shutdown));
            }
        } else {
            self.remote_actions.fetch_add(1, Ordering::Relaxed);
            let request_id = self.next_request.fetch_add(1, Ordering::Relaxed);
            self.shard(request_id).lock().insert(
                request_id,
                Pending {
                    dst,
                    handle: handle.clone(),
                },
            );
            let env = Envelope {
                src: self.id,
                dst,
                tag,
                request_id,
                payload,
            };
            if let Err(e) = self.transport().send(env) {
                if let Some(p) = self.shard(request_id).lock().remove(&request_id) {
                    p.handle.complete(Err(e.into()));
                }
            }
        }
        Ok(handle)
    }

    /// ACK payload: u64 acknowledged request id, u8 status (0 ok, 1 error),
    /// then the reply bytes or a UTF-8 error message.
    pub(crate) fn send_ack(&self, to: LocalityId, request_id: u64, outcome: Outcome) {
        let (status, body) = match outcome {
            Ok(reply) => (0u8, reply),
            Err(e) => (1u8, e.to_string().into_bytes()),
        };
        let mut payload = Vec::with_capacity(9 + body.len());
        payload.extend_from_slice(&request_id.to_le_bytes());
        payload.push(status);
        payload.extend_from_slice(&body);
        let env = Envelope {
            src: self.id,
            dst: to,
            tag: ActionTag::ACK,
            request_id: self.next_request.fetch_add(1, Ordering::Relaxed),
            payload,
        };
        if let Err(e) = self.transport().send(env) {
            log::debug!("locality {}: ack to {to} dropped: {e}", self.id);
        }
    }

    fn on_ack(&self, env: Envelope) {
        if env.payload.len() < 9 {
            log::warn!("locality {}: short ack from {}", self.id, env.src);
            return;
        }
        let acked = u64::from_le_bytes(env.payload[0..8].try_into().unwrap());
        let outcome = match env.payload[8] {
            0 => Ok(env.payload[9..].to_vec()),
            _ => Err(RuntimeError::Remote {
                locality: env.src,
                message: String::from_utf8_lossy(&env.payload[9..]).into_owned(),
            }),
        };
        let pending = self.shard(acked).lock().remove(&acked);
        match pending {
            Some(p) => p.handle.complete(outcome),
            None => log::warn!("locality {}: ack for unknown request {acked} from {}", self.id, env.src),
        }
    }

    fn inbound_done(&self, src: LocalityId) {
        if let Some(link) = self.links.get(src.index()) {
            if link.queued.fetch_sub(1, Ordering::SeqCst) == 1 && link.lost.load(Ordering::SeqCst) {
                self.peer_lost(src);
            }
        }
    }

    fn on_disconnect(&self, peer: LocalityId) {
        let Some(link) = self.links.get(peer.index()) else {
            return;
        };
        link.lost.store(true, Ordering::SeqCst);
        if link.queued.load(Ordering::SeqCst) == 0 {
            self.peer_lost(peer);
        }
    }

    fn peer_lost(&self, peer: LocalityId) {
        if self.closing.load(Ordering::Acquire) || self.links[peer.index()].failed.swap(true, Ordering::SeqCst) {
            return;
        }
        log::warn!("locality {}: lost link to locality {peer}", self.id);
        let err = RuntimeError::Transport(TransportError::Disconnected(peer));
        self.fail_pending(|p| p.dst == peer, &err);
        self.collectives
            .poison(RuntimeError::CollectiveFailed(format!("locality {peer} disconnected")));
    }

    fn fail_pending(&self, pred: impl Fn(&Pending) -> bool, err: &RuntimeError) {
        for shard in &self.pending {
            let failed: Vec<Pending> = {
                let mut m = shard.lock();
                let ids: Vec<u64> = m.iter().filter(|(_, p)| pred(p)).map(|(id, _)| *id).collect();
                ids.into_iter().filter_map(|id| m.remove(&id)).collect()
            };
            for p in failed {
                p.handle.complete(Err(err.clone()));
            }
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

/// Execution context of a driver or an action handler.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    loc: &'a Arc<LocalityState>,
    activation: Option<&'a Arc<Activation>>,
}

impl<'a> Ctx<'a> {
    pub fn here(&self) -> LocalityId {
        self.loc.id
    }

    pub fn localities(&self) -> usize {
        self.loc.common.localities
    }

    pub fn in_handler(&self) -> bool {
        self.activation.is_some()
    }

    /// Jobs waiting for a worker on this locality.
    pub fn backlog(&self) -> usize {
        self.loc.queue.len()
    }

    /// Runs the handler for `tag` on `dst`. Inside a handler the new action
    /// becomes a child of the current one, which then cannot complete
    /// before it.
    pub fn remote_action(
        &self,
        dst: LocalityId,
        tag: ActionTag,
        payload: Vec<u8>,
    ) -> Result<CompletionHandle, RuntimeError> {
        self.loc.spawn(self.activation, dst, tag, payload)
    }

    /// Keeps the current action incomplete until the hold is released.
    pub fn hold(&self) -> Result<Hold, RuntimeError> {
        self.activation.map(Hold::new).ok_or(RuntimeError::NotInHandler("hold"))
    }
}

/// Per-locality handle for the thread running an SPMD body.
pub struct Driver {
    loc: Arc<LocalityState>,
}

impl Driver {
    pub fn here(&self) -> LocalityId {
        self.loc.id
    }

    pub fn localities(&self) -> usize {
        self.loc.common.localities
    }

    /// Worker threads of this locality.
    pub fn workers(&self) -> usize {
        self.loc.common.workers
    }

    pub fn ctx(&self) -> Ctx<'_> {
        Ctx {
            loc: &self.loc,
            activation: None,
        }
    }

    pub fn remote_action(
        &self,
        dst: LocalityId,
        tag: ActionTag,
        payload: Vec<u8>,
    ) -> Result<CompletionHandle, RuntimeError> {
        self.ctx().remote_action(dst, tag, payload)
    }

    /// Blocks until every action this driver issued, and everything those
    /// spawned, has completed.
    pub fn quiesce(&self) {
        self.loc.roots.wait_idle();
    }

    /// Number of driver-issued actions not yet complete.
    pub fn outstanding(&self) -> usize {
        self.loc.roots.outstanding()
    }

    /// Returns once every locality has reached the barrier with no
    /// outstanding actions. No handler spawned before the barrier runs
    /// after it returns on any locality.
    pub fn barrier(&self) -> Result<(), RuntimeError> {
        self.quiesce();
        let epoch = self.loc.barrier_epoch.fetch_add(1, Ordering::Relaxed);
        self.remote_action(LocalityId(0), BARRIER_TAG, epoch.to_le_bytes().to_vec())?
            .wait()
    }

    /// Element-wise sum across localities, added in locality order so every
    /// locality receives the same bits.
    pub fn all_reduce_sum(&self, values: &[f64]) -> Result<Vec<f64>, RuntimeError> {
        let epoch = self.loc.reduce_epoch.fetch_add(1, Ordering::Relaxed);
        let payload = collective::encode_reduce(epoch, self.loc.id.0, values);
        let reply = self.remote_action(LocalityId(0), REDUCE_TAG, payload)?.wait_reply()?;
        collective::decode_f64s(&reply)
    }
}

pub struct Runtime {
    config: RuntimeConfig,
    locs: Vec<Arc<LocalityState>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    stopped: AtomicBool,
}

impl Runtime {
    pub fn localities(&self) -> usize {
        self.config.localities
    }

    pub fn workers(&self) -> usize {
        self.config.workers
    }

    pub fn transport_kind(&self) -> TransportKind {
        self.config.transport.kind()
    }

    pub fn hosted(&self) -> Vec<LocalityId> {
        self.locs.iter().map(|l| l.id).collect()
    }

    pub fn driver(&self, id: LocalityId) -> Option<Driver> {
        self.locs
            .iter()
            .find(|l| l.id == id)
            .map(|l| Driver { loc: Arc::clone(l) })
    }

    /// Runs `body` once per hosted locality, each on its own thread, and
    /// returns the results in locality order.
    pub fn run_spmd<R, F>(&self, body: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&Driver) -> R + Sync,
    {
        if let [loc] = self.locs.as_slice() {
            return vec![body(&Driver { loc: Arc::clone(loc) })];
        }
        thread::scope(|s| {
            let joins: Vec<_> = self
                .locs
                .iter()
                .map(|loc| {
                    let d = Driver { loc: Arc::clone(loc) };
                    let body = &body;
                    s.spawn(move || body(&d))
                })
                .collect();
            joins
                .into_iter()
                .map(|j| j.join().unwrap_or_else(|p| panic::resume_unwind(p)))
                .collect()
        })
    }

    pub fn stats(&self) -> Vec<LocalityStats> {
        self.locs
            .iter()
            .map(|l| LocalityStats {
                remote_actions: l.remote_actions.load(Ordering::Relaxed),
                local_actions: l.local_actions.load(Ordering::Relaxed),
            })
            .collect()
    }

    /// Live links from `id` to other localities.
    pub fn peer_links(&self, id: LocalityId) -> Option<usize> {
        self.locs
            .iter()
            .find(|l| l.id == id)
            .map(|l| l.transport().peer_links())
    }

    /// Simulates the loss of a hosted locality: its transport shuts down and
    /// every peer observes a disconnect.
    pub fn kill_locality(&self, id: LocalityId) -> Result<(), RuntimeError> {
        let loc = self
            .locs
            .iter()
            .find(|l| l.id == id)
            .ok_or(RuntimeError::NotHosted(id))?;
        loc.closing.store(true, Ordering::Release);
        loc.transport().shutdown();
        loc.fail_pending(|_| true, &RuntimeError::Shutdown);
        loc.collectives.poison(RuntimeError::Shutdown);
        Ok(())
    }

    /// Stops workers and closes the transport. Outstanding handles fail
    /// with [`RuntimeError::Shutdown`]. Called on drop.
    pub fn shutdown(&self) {
        if self.stopped.swap(true, Ordering::AcqRel) {
            return;
        }
        // Drain queued jobs first so acks produced by running handlers reach
        // the transport before it closes.
        for l in &self.locs {
            for _ in 0..self.config.workers {
                let _ = l.queue.send(Job::Stop);
            }
        }
        for j in self.workers.lock().drain(..) {
            let _ = j.join();
        }
        for l in &self.locs {
            l.closing.store(true, Ordering::Release);
        }
        for l in &self.locs {
            if let Some(t) = l.transport.get() {
                t.shutdown();
            }
        }
        for l in &self.locs {
            l.fail_pending(|_| true, &RuntimeError::Shutdown);
            l.collectives.poison(RuntimeError::Shutdown);
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}
