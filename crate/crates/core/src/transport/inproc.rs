use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Envelope, Inbound, LinkDelay, LocalityId, Transport, TransportError};

struct Slot {
    inbound: OnceLock<Inbound>,
    alive: AtomicBool,
}

type DelayLine = (Sender<(Instant, Envelope)>, Duration);

/// Shared state of the in-process transport. Envelopes are moved, not
/// serialized.
pub struct InProcessNetwork {
    slots: Vec<Slot>,
    // Indexed by `src * L + dst`; present only for delayed links.
    delayed: Vec<Option<DelayLine>>,
}

impl InProcessNetwork {
    pub fn new(localities: usize, delays: &[LinkDelay]) -> Result<Arc<Self>, TransportError> {
        if localities == 0 {
            return Err(TransportError::Config("at least one locality is required".into()));
        }
        let mut receivers = Vec::new();
        let net = Arc::new_cyclic(|weak: &Weak<InProcessNetwork>| {
            let mut delayed: Vec<Option<DelayLine>> = (0..localities * localities).map(|_| None).collect();
            for d in delays {
                let (tx, rx) = unbounded();
                delayed[d.src.index() * localities + d.dst.index()] = Some((tx, d.delay));
                receivers.push((rx, weak.clone()));
            }
            InProcessNetwork {
                slots: (0..localities)
                    .map(|_| Slot {
                        inbound: OnceLock::new(),
                        alive: AtomicBool::new(true),
                    })
                    .collect(),
                delayed,
            }
        });
        for (rx, weak) in receivers {
            thread::Builder::new()
                .name("inproc-delay".into())
                .spawn(move || forward_delayed(rx, weak))
                .map_err(|e| TransportError::Config(format!("spawn delay thread: {e}")))?;
        }
        Ok(net)
    }

    /// Registers the inbound sink of `here` and returns its endpoint.
    pub fn attach(self: &Arc<Self>, here: LocalityId, inbound: Inbound) -> Arc<dyn Transport> {
        assert!(
            self.slots[here.index()].inbound.set(inbound).is_ok(),
            "locality {here} attached twice"
        );
        Arc::new(InProcessEndpoint {
            here,
            net: Arc::clone(self),
        })
    }

    fn deliver(&self, env: Envelope) {
        if let Some(inbound) = self.slots[env.dst.index()].inbound.get() {
            (inbound.deliver)(env);
        }
    }
}

fn forward_delayed(rx: Receiver<(Instant, Envelope)>, net: Weak<InProcessNetwork>) {
    while let Ok((due, env)) = rx.recv() {
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        match net.upgrade() {
            Some(net) if net.slots[env.dst.index()].alive.load(Ordering::Acquire) => net.deliver(env),
            Some(_) => {}
            None => return,
        }
    }
}

struct InProcessEndpoint {
    here: LocalityId,
    net: Arc<InProcessNetwork>,
}

impl Transport for InProcessEndpoint {
    fn here(&self) -> LocalityId {
        self.here
    }

    fn localities(&self) -> usize {
        self.net.slots.len()
    }

    fn send(&self, env: Envelope) -> Result<(), TransportError> {
        debug_assert_eq!(env.src, self.here);
        let l = self.net.slots.len();
        let dst = env.dst;
        let slot = self
            .net
            .slots
            .get(dst.index())
            .ok_or(TransportError::UnknownLocality(dst))?;
        if !self.net.slots[self.here.index()].alive.load(Ordering::Acquire) {
            return Err(TransportError::Disconnected(self.here));
        }
        if !slot.alive.load(Ordering::Acquire) {
            return Err(TransportError::Disconnected(dst));
        }
        if let Some((tx, delay)) = &self.net.delayed[self.here.index() * l + dst.index()] {
            let due = Instant::now() + *delay;
            return tx.send((due, env)).map_err(|_| TransportError::Disconnected(dst));
        }
        self.net.deliver(env);
        Ok(())
    }

    fn peer_links(&self) -> usize {
        if !self.net.slots[self.here.index()].alive.load(Ordering::Acquire) {
            return 0;
        }
        self.net
            .slots
            .iter()
            .enumerate()
            .filter(|(i, s)| *i != self.here.index() && s.alive.load(Ordering::Acquire))
            .count()
    }

    fn shutdown(&self) {
        let me = &self.net.slots[self.here.index()];
        if !me.alive.swap(false, Ordering::AcqRel) {
            return;
        }
        for (i, slot) in self.net.slots.iter().enumerate() {
            if i == self.here.index() || !slot.alive.load(Ordering::Acquire) {
                continue;
            }
            if let Some(inbound) = slot.inbound.get() {
                (inbound.disconnected)(self.here);
            }
        }
    }
}
