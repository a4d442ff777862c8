//! Request handles and completion status.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;

use crate::datatype::{unpack, Elem};
use crate::error::{Error, Result};
use crate::fabric::Endpoint;

/// Outcome of a completed operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Status {
    /// Rank of the sender within the communicator.
    pub source: i32,
    /// Sending stream index on multiplex communicators, otherwise
    /// [`crate::NO_INDEX`].
    pub source_index: i32,
    pub tag: i32,
    /// Bytes actually delivered into the receive buffer.
    pub len: usize,
    /// The message was longer than the posted buffer and was cut short.
    pub truncated: bool,
}

impl Status {
    pub fn count<T: Elem>(&self) -> usize {
        self.len / T::SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Send,
    Recv,
}

pub(crate) type Writer = Box<dyn FnOnce(&[u8]) + Send>;

pub(crate) struct RequestInner {
    pub(crate) kind: RequestKind,
    pub(crate) stream_id: u64,
    pub(crate) context_id: u32,
    pub(crate) capacity: usize,
    /// Set once the operation is registered on an endpoint.
    pub(crate) endpoint: OnceLock<Arc<Endpoint>>,
    /// Issuing execution queue, for requests created by the enqueue calls.
    pub(crate) queue_id: Option<u64>,
    /// Applied to the received bytes by the enqueued wait.
    pub(crate) writer: Mutex<Option<Writer>>,
    complete: AtomicBool,
    outcome: Mutex<Option<(Status, Vec<u8>)>>,
}

impl RequestInner {
    pub(crate) fn new(kind: RequestKind, stream_id: u64, context_id: u32, capacity: usize) -> Self {
        Self {
            kind,
            stream_id,
            context_id,
            capacity,
            endpoint: OnceLock::new(),
            queue_id: None,
            writer: Mutex::new(None),
            complete: AtomicBool::new(false),
            outcome: Mutex::new(None),
        }
    }

    pub(crate) fn for_queue(mut self, queue_id: u64, writer: Option<Writer>) -> Self {
        self.queue_id = Some(queue_id);
        self.writer = Mutex::new(writer);
        self
    }

    pub(crate) fn complete(&self, status: Status, payload: Vec<u8>) {
        *self.outcome.lock() = Some((status, payload));
        self.complete.store(true, Ordering::Release);
    }

    pub(crate) fn is_complete(&self) -> bool {
        self.complete.load(Ordering::Acquire)
    }

    /// Drives progress on the issuing endpoint until the request completes.
    pub(crate) fn block(&self) {
        let mut idle = 0u32;
        while !self.is_complete() {
            let moved = match self.endpoint.get() {
                Some(ep) => ep.progress(),
                None => 0,
            };
            if moved == 0 {
                idle += 1;
                if idle > 16 {
                    std::thread::yield_now();
                } else {
                    std::hint::spin_loop();
                }
            } else {
                idle = 0;
            }
        }
    }

    pub(crate) fn status(&self) -> Option<Status> {
        self.outcome.lock().as_ref().map(|(s, _)| *s)
    }

    pub(crate) fn take_payload(&self) -> Option<Vec<u8>> {
        self.outcome.lock().as_mut().map(|(_, p)| std::mem::take(p))
    }
}

/// Handle for a pending operation.
///
/// A request is consumed by the first successful [`Request::wait`]; the
/// received payload stays available through [`Request::take_data`].
pub struct Request {
    pub(crate) inner: Arc<RequestInner>,
    consumed: bool,
}

impl std::fmt::Debug for Request {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Request")
            .field("kind", &self.inner.kind)
            .field("stream", &self.inner.stream_id)
            .field("complete", &self.inner.is_complete())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl Request {
    pub(crate) fn new(inner: Arc<RequestInner>) -> Self {
        Self {
            inner,
            consumed: false,
        }
    }

    pub fn kind(&self) -> RequestKind {
        self.inner.kind
    }

    /// Id of the stream the request was issued on (0 for the null stream).
    pub fn stream_id(&self) -> u64 {
        self.inner.stream_id
    }

    pub fn context_id(&self) -> u32 {
        self.inner.context_id
    }

    pub fn is_complete(&self) -> bool {
        self.inner.is_complete()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Non-blocking completion check with one progress pass.
    pub fn test(&mut self) -> Result<Option<Status>> {
        if self.consumed {
            return Err(Error::InvalidRequest);
        }
        if !self.inner.is_complete() {
            if let Some(ep) = self.inner.endpoint.get() {
                ep.progress();
            }
        }
        if self.inner.is_complete() {
            self.consumed = true;
            Ok(self.inner.status())
        } else {
            Ok(None)
        }
    }

    /// Blocks until the operation completes, driving progress only on the
    /// endpoint the request was issued on.
    pub fn wait(&mut self) -> Result<Status> {
        if self.consumed {
            return Err(Error::InvalidRequest);
        }
        self.inner.block();
        self.consumed = true;
        Ok(self
            .inner
            .status()
            .expect("completed request carries a status"))
    }

    pub fn take_bytes(&mut self) -> Option<Vec<u8>> {
        if !self.inner.is_complete() {
            return None;
        }
        self.inner.take_payload()
    }

    pub fn take_data<T: Elem>(&mut self) -> Option<Vec<T>> {
        self.take_bytes().map(|b| unpack(&b))
    }
}

/// Waits on every request; completion order is irrelevant.
pub fn waitall(requests: &mut [Request]) -> Result<Vec<Status>> {
    if requests.iter().any(|r| r.consumed) {
        return Err(Error::InvalidRequest);
    }
    requests.iter_mut().map(Request::wait).collect()
}

pub(crate) fn send_status(rank: u32, src_idx: i32, tag: i32, len: usize) -> Status {
    Status {
        source: rank as i32,
        source_index: src_idx,
        tag,
        len,
        truncated: false,
    }
}
