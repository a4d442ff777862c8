//! Endpoints (VCIs): posted-receive and unexpected-message queues, the
//! tag-matching engine, and per-endpoint exclusion.

use std::cell::UnsafeCell;
use std::collections::VecDeque;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Arc;

use crossbeam_queue::SegQueue;
use parking_lot::{Mutex, MutexGuard};

use super::wire::Envelope;
use crate::config::Exclusion;
use crate::request::{RequestInner, Status};

pub const ANY_SOURCE: i32 = -1;
pub const ANY_TAG: i32 = -1;
/// Wildcard for the sending stream index on multiplex receives.
pub const ANY_INDEX: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolClass {
    Implicit,
    Explicit,
}

/// Receive-side matching signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPattern {
    pub context_id: u32,
    pub source: i32,
    pub tag: i32,
    pub src_idx: i32,
    pub dst_idx: i32,
}

impl MatchPattern {
    pub fn accepts(&self, env: &Envelope) -> bool {
        self.context_id == env.context_id
            && self.dst_idx == env.dst_idx
            && (self.source == ANY_SOURCE || self.source as u32 == env.src_rank)
            // ANY_TAG never matches the negative tags reserved for collectives
            && (if self.tag == ANY_TAG { env.tag >= 0 } else { self.tag == env.tag })
            && (self.src_idx == ANY_INDEX || self.src_idx == env.src_idx)
    }
}

/// Inbound frames for one endpoint.
///
/// Every (remote process, remote endpoint) channel feeding this endpoint
/// appends to the same FIFO, so per-channel order is preserved.
#[derive(Default)]
pub(crate) struct Inbox {
    frames: SegQueue<Vec<u8>>,
}

impl Inbox {
    pub(crate) fn push(&self, frame: Vec<u8>) {
        self.frames.push(frame);
    }

    fn pop(&self) -> Option<Vec<u8>> {
        self.frames.pop()
    }
}

pub(crate) struct PostedRecv {
    pub(crate) pattern: MatchPattern,
    pub(crate) req: Arc<RequestInner>,
}

pub(crate) struct Arrived {
    pub(crate) env: Envelope,
    pub(crate) payload: Vec<u8>,
}

/// Counters kept under the endpoint's exclusion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EndpointStats {
    pub frames_out: u64,
    pub frames_in: u64,
    pub polls: u64,
    pub matched_posted: u64,
    pub matched_unexpected: u64,
}

#[derive(Default)]
pub(crate) struct MatchState {
    pub(crate) posted: VecDeque<PostedRecv>,
    pub(crate) unexpected: VecDeque<Arrived>,
    pub(crate) stats: EndpointStats,
}

/// Result of routing one arrived message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteOutcome {
    Matched(Status),
    StoredUnexpected,
}

fn deliver(req: &RequestInner, env: &Envelope, mut payload: Vec<u8>) -> Status {
    let truncated = payload.len() > req.capacity;
    payload.truncate(req.capacity);
    let status = Status {
        source: env.src_rank as i32,
        source_index: env.src_idx,
        tag: env.tag,
        len: payload.len(),
        truncated,
    };
    req.complete(status, payload);
    status
}

impl MatchState {
    /// Matches an arrived message against posted receives in post order, or
    /// queues it as unexpected.
    pub(crate) fn route_and_match(&mut self, env: Envelope, payload: Vec<u8>) -> RouteOutcome {
        self.stats.frames_in += 1;
        if let Some(pos) = self.posted.iter().position(|p| p.pattern.accepts(&env)) {
            let posted = self.posted.remove(pos).expect("position is in range");
            self.stats.matched_posted += 1;
            RouteOutcome::Matched(deliver(&posted.req, &env, payload))
        } else {
            self.unexpected.push_back(Arrived { env, payload });
            RouteOutcome::StoredUnexpected
        }
    }

    /// Posts a receive: the oldest acceptable unexpected message wins,
    /// otherwise the receive joins the posted queue.
    pub(crate) fn post(&mut self, pattern: MatchPattern, req: Arc<RequestInner>) -> Option<Status> {
        if let Some(pos) = self.unexpected.iter().position(|a| pattern.accepts(&a.env)) {
            let arrived = self.unexpected.remove(pos).expect("position is in range");
            self.stats.matched_unexpected += 1;
            Some(deliver(&req, &arrived.env, arrived.payload))
        } else {
            self.posted.push_back(PostedRecv { pattern, req });
            None
        }
    }

    pub(crate) fn has_pending_for_stream(&self, stream_id: u64) -> bool {
        self.posted.iter().any(|p| p.req.stream_id == stream_id)
    }

    pub(crate) fn has_pending_for_context(&self, context_id: u32) -> bool {
        self.posted
            .iter()
            .any(|p| p.pattern.context_id == context_id)
    }

    pub(crate) fn purge_context(&mut self, context_id: u32) -> usize {
        let before = self.unexpected.len();
        self.unexpected.retain(|a| a.env.context_id != context_id);
        before - self.unexpected.len()
    }
}

const REGIME_GLOBAL: u8 = 0;
const REGIME_PER_ENDPOINT: u8 = 1;
const REGIME_NONE: u8 = 2;

fn encode_regime(e: Exclusion) -> u8 {
    match e {
        Exclusion::Global => REGIME_GLOBAL,
        Exclusion::PerEndpoint => REGIME_PER_ENDPOINT,
        Exclusion::None => REGIME_NONE,
    }
}

/// An isolated communication context.
pub struct Endpoint {
    id: usize,
    pool_index: usize,
    class: PoolClass,
    pub(crate) inbox: Arc<Inbox>,
    regime: AtomicU8,
    lock: Mutex<()>,
    global: Arc<Mutex<()>>,
    verify_serial: bool,
    serial_busy: AtomicBool,
    state: UnsafeCell<MatchState>,
}

// SAFETY: `state` is only reached through `EndpointGuard`, which holds the
// global or per-endpoint mutex, or, under the `None` regime, relies on the
// owning stream's serial context (checked at runtime unless the fabric was
// configured with `assume_serial_contexts`).
unsafe impl Sync for Endpoint {}
unsafe impl Send for Endpoint {}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("id", &self.id)
            .field("class", &self.class)
            .field("pool_index", &self.pool_index)
            .field("exclusion", &self.exclusion())
            .finish()
    }
}

impl Endpoint {
    pub(crate) fn new(
        id: usize,
        pool_index: usize,
        class: PoolClass,
        inbox: Arc<Inbox>,
        regime: Exclusion,
        global: Arc<Mutex<()>>,
        verify_serial: bool,
    ) -> Self {
        Self {
            id,
            pool_index,
            class,
            inbox,
            regime: AtomicU8::new(encode_regime(regime)),
            lock: Mutex::new(()),
            global,
            verify_serial,
            serial_busy: AtomicBool::new(false),
            state: UnsafeCell::new(MatchState::default()),
        }
    }

    /// Process-wide endpoint id: implicit endpoints first, then explicit.
    pub fn id(&self) -> usize {
        self.id
    }

    /// Position within this endpoint's pool class.
    pub fn pool_index(&self) -> usize {
        self.pool_index
    }

    pub fn class(&self) -> PoolClass {
        self.class
    }

    pub fn exclusion(&self) -> Exclusion {
        match self.regime.load(Ordering::Acquire) {
            REGIME_GLOBAL => Exclusion::Global,
            REGIME_PER_ENDPOINT => Exclusion::PerEndpoint,
            _ => Exclusion::None,
        }
    }

    /// Only called while nobody holds the endpoint (acquire/release).
    pub(crate) fn set_exclusion(&self, e: Exclusion) {
        self.regime.store(encode_regime(e), Ordering::Release);
    }

    pub(crate) fn enter(&self) -> EndpointGuard<'_> {
        let held = match self.regime.load(Ordering::Acquire) {
            REGIME_GLOBAL => Held::Lock(self.global.lock()),
            REGIME_PER_ENDPOINT => Held::Lock(self.lock.lock()),
            _ if self.verify_serial => {
                if self.serial_busy.swap(true, Ordering::Acquire) {
                    panic!(
                        "serial context violated: endpoint {} entered concurrently",
                        self.id
                    );
                }
                Held::Serial
            }
            _ => Held::Trusted,
        };
        EndpointGuard { ep: self, held }
    }

    /// Drains every frame currently in the inbox through the matching engine.
    /// Returns the number of frames processed.
    pub fn progress(&self) -> usize {
        let mut guard = self.enter();
        guard.drain_inbox()
    }

    /// Routes an already decoded message as if it had just arrived.
    pub fn route_and_match(&self, env: Envelope, payload: Vec<u8>) -> RouteOutcome {
        self.enter().route_and_match(env, payload)
    }

    pub fn stats(&self) -> EndpointStats {
        self.enter().stats
    }

    pub fn posted_len(&self) -> usize {
        self.enter().posted.len()
    }

    pub fn unexpected_len(&self) -> usize {
        self.enter().unexpected.len()
    }

    /// Drops any buffered traffic. Used when an endpoint goes back to the pool.
    pub(crate) fn reset(&self) {
        let mut guard = self.enter();
        guard.drain_inbox();
        guard.unexpected.clear();
    }
}

enum Held<'a> {
    Lock(#[allow(dead_code)] MutexGuard<'a, ()>),
    Serial,
    Trusted,
}

pub(crate) struct EndpointGuard<'a> {
    ep: &'a Endpoint,
    held: Held<'a>,
}

impl EndpointGuard<'_> {
    pub(crate) fn drain_inbox(&mut self) -> usize {
        self.stats.polls += 1;
        let mut n = 0;
        while let Some(frame) = self.ep.inbox.pop() {
            match Envelope::decode_frame(frame) {
                Ok((env, payload)) => {
                    self.route_and_match(env, payload);
                }
                Err(e) => panic!("corrupt frame on endpoint {}: {e}", self.ep.id),
            }
            n += 1;
        }
        n
    }
}

impl Deref for EndpointGuard<'_> {
    type Target = MatchState;

    fn deref(&self) -> &MatchState {
        // SAFETY: see `unsafe impl Sync for Endpoint`.
        unsafe { &*self.ep.state.get() }
    }
}

impl DerefMut for EndpointGuard<'_> {
    fn deref_mut(&mut self) -> &mut MatchState {
        // SAFETY: see `unsafe impl Sync for Endpoint`.
        unsafe { &mut *self.ep.state.get() }
    }
}

impl Drop for EndpointGuard<'_> {
    fn drop(&mut self) {
        if let Held::Serial = self.held {
            self.ep.serial_busy.store(false, Ordering::Release);
        }
    }
}
