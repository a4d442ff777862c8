//! Stream objects: local serial execution contexts bound to endpoints or to
//! execution queues.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::enqueue::ExecQueue;
use crate::error::{Error, Result};
use crate::fabric::{AcquireMode, Endpoint, Lease, Process};
use crate::info::Info;

pub const HINT_TYPE: &str = "type";
pub const HINT_VALUE: &str = "value";
pub const HINT_ENDPOINT_POLICY: &str = "endpoint_policy";
pub const TYPE_EXEC_QUEUE: &str = "exec_queue";
pub const TYPE_SERIAL_CONTEXT: &str = "serial_context";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    SerialContext,
    ExecQueue,
    Null,
}

pub(crate) struct StreamInner {
    id: u64,
    kind: StreamKind,
    lease: Lease,
    queue: Option<ExecQueue>,
    refcount: AtomicUsize,
    freed: AtomicBool,
    proc: Arc<Process>,
}

/// Handle to a stream. Cloning copies the handle, not the stream.
///
/// [`STREAM_NULL`] stands for "no stream": its traffic goes through the
/// implicit endpoint pool exactly like traffic on a plain communicator.
#[derive(Clone, Default)]
pub struct Stream {
    inner: Option<Arc<StreamInner>>,
}

pub const STREAM_NULL: Stream = Stream { inner: None };

impl std::fmt::Debug for Stream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.inner {
            None => f.write_str("STREAM_NULL"),
            Some(s) => f
                .debug_struct("Stream")
                .field("id", &s.id)
                .field("kind", &s.kind)
                .field("endpoint", &s.lease.endpoint().id())
                .field("mode", &s.lease.mode())
                .finish(),
        }
    }
}

impl PartialEq for Stream {
    fn eq(&self, other: &Self) -> bool {
        match (&self.inner, &other.inner) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Stream {
    pub fn null() -> Self {
        STREAM_NULL
    }

    /// Creates a stream on `proc`.
    ///
    /// Without hints the stream gets an exclusive explicit endpoint, and
    /// creation fails with `PoolExhausted` once none remain. The hint
    /// `endpoint_policy=shared` maps the stream round-robin onto the explicit
    /// pool instead. `type=exec_queue` with a hex `value` naming an
    /// [`ExecQueue`] handle creates a queue-backed stream, which always
    /// shares its endpoint.
    pub fn create(proc: &Arc<Process>, info: &Info) -> Result<Self> {
        let kind = match info.get(HINT_TYPE) {
            None | Some(TYPE_SERIAL_CONTEXT) => StreamKind::SerialContext,
            Some(TYPE_EXEC_QUEUE) => StreamKind::ExecQueue,
            Some(other) => return Err(Error::BadHint(format!("unknown stream type `{other}`"))),
        };
        let mut mode = match info.get(HINT_ENDPOINT_POLICY) {
            None | Some("exclusive") => AcquireMode::Exclusive,
            Some("shared") => AcquireMode::Shared,
            Some(other) => {
                return Err(Error::BadHint(format!("unknown endpoint policy `{other}`")))
            }
        };
        let queue =
            if kind == StreamKind::ExecQueue {
                mode = AcquireMode::Shared;
                let raw = info
                    .get_hex(HINT_VALUE)
                    .map_err(|e| Error::BadHint(e.to_string()))?;
                let handle: [u8; 8] = raw.as_slice().try_into().map_err(|_| {
                    Error::BadHint(format!("queue handle must be 8 bytes, got {}", raw.len()))
                })?;
                let handle = u64::from_le_bytes(handle);
                Some(ExecQueue::from_handle(handle).ok_or_else(|| {
                    Error::BadHint(format!("no live execution queue {handle:#x}"))
                })?)
            } else {
                None
            };
        let lease = proc.endpoint_acquire(mode)?;
        let id = proc.next_stream_id.fetch_add(1, Ordering::Relaxed);
        proc.live_streams.fetch_add(1, Ordering::AcqRel);
        Ok(Self {
            inner: Some(Arc::new(StreamInner {
                id,
                kind,
                lease,
                queue,
                refcount: AtomicUsize::new(0),
                freed: AtomicBool::new(false),
                proc: proc.clone(),
            })),
        })
    }

    /// Releases the stream's endpoint.
    ///
    /// Fails with `InUse` while communicators reference the stream and with
    /// `PendingOps` while its receives are unmatched; the stream stays valid
    /// in both cases.
    pub fn free(&self) -> Result<()> {
        let s = self.inner.as_ref().ok_or(Error::InvalidStream)?;
        if s.freed.load(Ordering::Acquire) {
            return Err(Error::InvalidStream);
        }
        let refs = s.refcount.load(Ordering::Acquire);
        if refs > 0 {
            return Err(Error::InUse(refs));
        }
        if let Some(q) = &s.queue {
            if q.pending() > 0 {
                return Err(Error::PendingOps);
            }
        }
        s.proc.endpoint_release(&s.lease, Some(s.id))?;
        s.freed.store(true, Ordering::Release);
        s.proc.live_streams.fetch_sub(1, Ordering::AcqRel);
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.inner.is_none()
    }

    /// Process-unique id; 0 for the null stream.
    pub fn id(&self) -> u64 {
        self.inner.as_ref().map_or(0, |s| s.id)
    }

    pub fn kind(&self) -> StreamKind {
        self.inner.as_ref().map_or(StreamKind::Null, |s| s.kind)
    }

    pub fn endpoint(&self) -> Option<&Arc<Endpoint>> {
        self.inner.as_ref().map(|s| s.lease.endpoint())
    }

    pub fn is_exclusive(&self) -> bool {
        self.inner
            .as_ref()
            .is_some_and(|s| s.lease.mode() == AcquireMode::Exclusive)
    }

    pub fn queue(&self) -> Option<&ExecQueue> {
        self.inner.as_ref().and_then(|s| s.queue.as_ref())
    }

    pub fn refcount(&self) -> usize {
        self.inner
            .as_ref()
            .map_or(0, |s| s.refcount.load(Ordering::Acquire))
    }

    pub fn is_freed(&self) -> bool {
        self.inner
            .as_ref()
            .is_some_and(|s| s.freed.load(Ordering::Acquire))
    }

    /// Rank of the owning process, if any.
    pub(crate) fn process(&self) -> Option<&Arc<Process>> {
        self.inner.as_ref().map(|s| &s.proc)
    }

    pub(crate) fn attach(&self) -> Result<()> {
        if let Some(s) = &self.inner {
            if s.freed.load(Ordering::Acquire) {
                return Err(Error::InvalidStream);
            }
            s.refcount.fetch_add(1, Ordering::AcqRel);
        }
        Ok(())
    }

    pub(crate) fn detach(&self) {
        if let Some(s) = &self.inner {
            s.refcount.fetch_sub(1, Ordering::AcqRel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FabricConfig;
    use crate::fabric::Fabric;

    fn proc_with(explicit: usize) -> Arc<Process> {
        Fabric::new(1, FabricConfig::new().explicit_pool_size(explicit))
            .unwrap()
            .process(0)
    }

    #[test]
    fn exclusive_creation_exhausts_pool() {
        let p = proc_with(2);
        let a = Stream::create(&p, &Info::new()).unwrap();
        let b = Stream::create(&p, &Info::new()).unwrap();
        assert_eq!(a.endpoint().unwrap().pool_index(), 0);
        assert_eq!(b.endpoint().unwrap().pool_index(), 1);
        assert!(a.is_exclusive());
        assert_eq!(
            Stream::create(&p, &Info::new()).unwrap_err(),
            Error::PoolExhausted
        );
    }

    #[test]
    fn free_returns_endpoint() {
        let p = proc_with(1);
        let a = Stream::create(&p, &Info::new()).unwrap();
        a.free().unwrap();
        assert!(a.is_freed());
        assert_eq!(a.free(), Err(Error::InvalidStream));
        let b = Stream::create(&p, &Info::new()).unwrap();
        assert_eq!(b.endpoint().unwrap().pool_index(), 0);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn shared_policy_round_robin() {
        let p = proc_with(1);
        let mut info = Info::new();
        info.set(HINT_ENDPOINT_POLICY, "shared");
        let all: Vec<_> = (0..3).map(|_| Stream::create(&p, &info).unwrap()).collect();
        assert!(all.iter().all(|s| s.endpoint().unwrap().pool_index() == 0));
        assert!(all.iter().all(|s| !s.is_exclusive()));
    }

    #[test]
    fn null_stream_not_freeable() {
        assert_eq!(STREAM_NULL.free(), Err(Error::InvalidStream));
        assert_eq!(Stream::null().kind(), StreamKind::Null);
        assert_eq!(STREAM_NULL.id(), 0);
    }

    #[test]
    fn bad_hints() {
        let p = proc_with(1);
        let mut info = Info::new();
        info.set(HINT_TYPE, "cudaStream_t");
        assert!(matches!(Stream::create(&p, &info), Err(Error::BadHint(_))));
        let mut info = Info::new();
        info.set(HINT_TYPE, TYPE_EXEC_QUEUE);
        info.set(HINT_VALUE, "zz");
        assert!(matches!(Stream::create(&p, &info), Err(Error::BadHint(_))));
        info.set_hex(HINT_VALUE, &u64::MAX.to_le_bytes());
        assert!(matches!(Stream::create(&p, &info), Err(Error::BadHint(_))));
        let mut info = Info::new();
        info.set(HINT_ENDPOINT_POLICY, "sometimes");
        assert!(matches!(Stream::create(&p, &info), Err(Error::BadHint(_))));
    }

    #[test]
    fn no_explicit_pool() {
        let p = proc_with(0);
        assert_eq!(
            Stream::create(&p, &Info::new()).unwrap_err(),
            Error::NoExplicitPool
        );
    }
}
