//! Completion tracking.
//!
//! Every executing action owns an [`Activation`] whose counter starts at one
//! for the handler body. Each action spawned from inside the handler, and
//! each outstanding [`Hold`], adds one. The activation completes when the
//! counter drops to zero, which happens only after the body returned and
//! every child acknowledged, so completion closes over the whole spawned
//! subtree. A completed activation either resolves a local
//! [`CompletionHandle`] or sends an ACK to the locality that spawned it.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use super::{LocalityState, RuntimeError};
use crate::transport::LocalityId;

pub(crate) type Outcome = Result<Vec<u8>, RuntimeError>;

/// Counts handles issued outside any handler, so a locality can wait until
/// everything it started has finished.
#[derive(Default)]
pub(crate) struct RootCounter {
    count: Mutex<usize>,
    idle: Condvar,
}

impl RootCounter {
    fn inc(&self) {
        *self.count.lock() += 1;
    }

    fn dec(&self) {
        let mut c = self.count.lock();
        *c -= 1;
        if *c == 0 {
            self.idle.notify_all();
        }
    }

    pub(crate) fn wait_idle(&self) {
        let mut c = self.count.lock();
        while *c > 0 {
            self.idle.wait(&mut c);
        }
    }

    pub(crate) fn outstanding(&self) -> usize {
        *self.count.lock()
    }
}

struct HandleInner {
    state: Mutex<Option<Outcome>>,
    done: Condvar,
    parent: Option<Arc<Activation>>,
    root: Option<Arc<RootCounter>>,
}

/// Completes when its action and everything that action transitively
/// spawned have finished.
#[derive(Clone)]
pub struct CompletionHandle(Arc<HandleInner>);

impl std::fmt::Debug for CompletionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompletionHandle")
            .field("complete", &self.is_complete())
            .finish()
    }
}

impl CompletionHandle {
    pub(crate) fn new(parent: Option<Arc<Activation>>, root: Option<Arc<RootCounter>>) -> Self {
        if let Some(p) = &parent {
            p.pending.fetch_add(1, Ordering::AcqRel);
        }
        if let Some(r) = &root {
            r.inc();
        }
        CompletionHandle(Arc::new(HandleInner {
            state: Mutex::new(None),
            done: Condvar::new(),
            parent,
            root,
        }))
    }

    /// A handle that is already complete.
    pub fn ready(outcome: Result<(), RuntimeError>) -> Self {
        let h = CompletionHandle::new(None, None);
        h.complete(outcome.map(|()| Vec::new()));
        h
    }

    pub(crate) fn complete(&self, outcome: Outcome) {
        let err = outcome.as_ref().err().cloned();
        {
            let mut st = self.0.state.lock();
            if st.is_some() {
                return;
            }
            *st = Some(outcome);
        }
        self.0.done.notify_all();
        if let Some(p) = &self.0.parent {
            p.child_done(err);
        }
        if let Some(r) = &self.0.root {
            r.dec();
        }
    }

    pub fn is_complete(&self) -> bool {
        self.0.state.lock().is_some()
    }

    /// Blocks until completion. Must not be called from inside a handler.
    pub fn wait(&self) -> Result<(), RuntimeError> {
        self.wait_reply().map(|_| ())
    }

    /// Blocks until completion and returns the handler's reply bytes.
    pub fn wait_reply(&self) -> Result<Vec<u8>, RuntimeError> {
        let mut st = self.0.state.lock();
        loop {
            if let Some(o) = st.as_ref() {
                return o.clone();
            }
            self.0.done.wait(&mut st);
        }
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<(), RuntimeError>> {
        let mut st = self.0.state.lock();
        if st.is_none() {
            self.0.done.wait_for(&mut st, timeout);
        }
        st.as_ref().map(|o| o.clone().map(|_| ()))
    }
}

/// Waits for every handle; returns the first error (in collection order)
/// once all of them have settled.
pub fn wait_all<'a, I>(handles: I) -> Result<(), RuntimeError>
where
    I: IntoIterator<Item = &'a CompletionHandle>,
{
    let mut first = None;
    for h in handles {
        if let Err(e) = h.wait() {
            first.get_or_insert(e);
        }
    }
    first.map_or(Ok(()), Err)
}

pub(crate) enum Route {
    Local(CompletionHandle),
    Remote { to: LocalityId, request_id: u64 },
}

struct ActivationState {
    error: Option<RuntimeError>,
    reply: Vec<u8>,
}

pub(crate) struct Activation {
    pending: AtomicUsize,
    state: Mutex<ActivationState>,
    route: Mutex<Option<Route>>,
    loc: Arc<LocalityState>,
}

impl Activation {
    pub(crate) fn new(route: Route, loc: Arc<LocalityState>) -> Arc<Self> {
        Arc::new(Activation {
            pending: AtomicUsize::new(1),
            state: Mutex::new(ActivationState {
                error: None,
                reply: Vec::new(),
            }),
            route: Mutex::new(Some(route)),
            loc,
        })
    }

    pub(crate) fn body_done(&self, result: Outcome) {
        {
            let mut st = self.state.lock();
            match result {
                Ok(reply) => {
                    if !reply.is_empty() {
                        st.reply = reply;
                    }
                }
                Err(e) => {
                    st.error.get_or_insert(e);
                }
            }
        }
        self.release();
    }

    fn child_done(&self, err: Option<RuntimeError>) {
        if let Some(e) = err {
            self.state.lock().error.get_or_insert(e);
        }
        self.release();
    }

    fn release(&self) {
        if self.pending.fetch_sub(1, Ordering::AcqRel) == 1 {
            self.finish();
        }
    }

    fn finish(&self) {
        let outcome = {
            let mut st = self.state.lock();
            match st.error.take() {
                Some(e) => Err(e),
                None => Ok(std::mem::take(&mut st.reply)),
            }
        };
        let route = self.route.lock().take();
        match route {
            Some(Route::Local(h)) => h.complete(outcome),
            Some(Route::Remote { to, request_id }) => self.loc.send_ack(to, request_id, outcome),
            None => {}
        }
    }
}

/// Defers completion of the current activation until released. Dropping an
/// unreleased hold releases it.
pub struct Hold {
    activation: Option<Arc<Activation>>,
}

impl Hold {
    pub(crate) fn new(activation: &Arc<Activation>) -> Self {
        activation.pending.fetch_add(1, Ordering::AcqRel);
        Hold {
            activation: Some(Arc::clone(activation)),
        }
    }

    pub fn release(mut self) {
        if let Some(a) = self.activation.take() {
            a.release();
        }
    }

    /// Releases and sets the activation's reply bytes.
    pub fn release_with_reply(mut self, reply: Vec<u8>) {
        if let Some(a) = self.activation.take() {
            a.state.lock().reply = reply;
            a.release();
        }
    }

    pub fn fail(mut self, err: RuntimeError) {
        if let Some(a) = self.activation.take() {
            a.child_done(Some(err));
        }
    }
}

impl Drop for Hold {
    fn drop(&mut self) {
        if let Some(a) = self.activation.take() {
            a.release();
        }
    }
}
