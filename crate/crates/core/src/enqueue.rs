//! Simulated device execution queues and the enqueue operation family.
//!
//! An [`ExecQueue`] owns one worker thread that runs items strictly in the
//! order they were enqueued. Enqueue calls only append and return. Blocking
//! communication items (`send_enqueue`, `recv_enqueue`, `wait_enqueue`) hold
//! the queue until their communication completes; `isend_enqueue` and
//! `irecv_enqueue` finish as soon as the operation is registered on the
//! fabric.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex};

use crate::comm::{CommKind, Communicator};
use crate::datatype::{pack, unpack, Elem};
use crate::error::{Error, Result};
use crate::fabric::ANY_INDEX;
use crate::p2p::{check_recv_tag, check_tag};
use crate::request::{Request, RequestInner, RequestKind, Writer};
use crate::stream::StreamKind;

type Work = Box<dyn FnOnce() + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ItemKind {
    Task,
    Send,
    Recv,
    Isend,
    Irecv,
    Wait,
}

struct Item {
    seq: u64,
    kind: ItemKind,
    work: Work,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Item>,
    enqueued: u64,
    done: u64,
    started: Vec<(u64, ItemKind)>,
    panicked: bool,
    shutdown: bool,
}

struct Shared {
    id: u64,
    state: Mutex<QueueState>,
    work_ready: Condvar,
    progress: Condvar,
}

struct Owner {
    shared: Arc<Shared>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for Owner {
    fn drop(&mut self) {
        registry().lock().remove(&self.shared.id);
        self.shared.state.lock().shutdown = true;
        self.shared.work_ready.notify_all();
        // The worker may be parked inside a blocking item; let it finish on its own.
        drop(self.worker.lock().take());
    }
}

fn registry() -> &'static Mutex<HashMap<u64, Weak<Owner>>> {
    static REGISTRY: OnceLock<Mutex<HashMap<u64, Weak<Owner>>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

static NEXT_QUEUE: AtomicU64 = AtomicU64::new(1);

/// A FIFO execution queue with a dedicated worker.
#[derive(Clone)]
pub struct ExecQueue {
    owner: Arc<Owner>,
}

impl std::fmt::Debug for ExecQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecQueue")
            .field("id", &self.id())
            .field("pending", &self.pending())
            .finish()
    }
}

fn worker_loop(shared: Arc<Shared>) {
    loop {
        let item = {
            let mut st = shared.state.lock();
            loop {
                if let Some(item) = st.items.pop_front() {
                    st.started.push((item.seq, item.kind));
                    break item;
                }
                if st.shutdown {
                    return;
                }
                shared.work_ready.wait(&mut st);
            }
        };
        let failed = catch_unwind(AssertUnwindSafe(item.work)).is_err();
        let mut st = shared.state.lock();
        st.done += 1;
        st.panicked |= failed;
        shared.progress.notify_all();
    }
}

impl ExecQueue {
    pub fn create() -> Self {
        let id = NEXT_QUEUE.fetch_add(1, Ordering::Relaxed);
        let shared = Arc::new(Shared {
            id,
            state: Mutex::new(QueueState::default()),
            work_ready: Condvar::new(),
            progress: Condvar::new(),
        });
        let worker = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name(format!("exec-queue-{id}"))
                .spawn(move || worker_loop(shared))
                .expect("spawn queue worker")
        };
        let owner = Arc::new(Owner {
            shared,
            worker: Mutex::new(Some(worker)),
        });
        registry().lock().insert(id, Arc::downgrade(&owner));
        Self { owner }
    }

    /// Looks up a live queue by the value of [`ExecQueue::handle`].
    pub fn from_handle(handle: u64) -> Option<Self> {
        registry()
            .lock()
            .get(&handle)
            .and_then(Weak::upgrade)
            .map(|owner| Self { owner })
    }

    pub fn id(&self) -> u64 {
        self.owner.shared.id
    }

    /// Opaque handle, suitable for passing through an info hint.
    pub fn handle(&self) -> u64 {
        self.id()
    }

    pub fn handle_bytes(&self) -> [u8; 8] {
        self.handle().to_le_bytes()
    }

    /// Items enqueued but not yet done.
    pub fn pending(&self) -> u64 {
        let st = self.owner.shared.state.lock();
        st.enqueued - st.done
    }

    fn push(&self, kind: ItemKind, work: Work) {
        let shared = &self.owner.shared;
        let mut st = shared.state.lock();
        let seq = st.enqueued;
        st.enqueued += 1;
        st.items.push_back(Item { seq, kind, work });
        drop(st);
        shared.work_ready.notify_one();
    }

    /// Runs `task` on the worker after every earlier item is done.
    pub fn enqueue_task<F: FnOnce() + Send + 'static>(&self, task: F) {
        self.push(ItemKind::Task, Box::new(task));
    }

    /// Blocks until every item enqueued before the call is done.
    pub fn synchronize(&self) -> Result<()> {
        let shared = &self.owner.shared;
        let mut st = shared.state.lock();
        let target = st.enqueued;
        while st.done < target {
            shared.progress.wait(&mut st);
        }
        if std::mem::take(&mut st.panicked) {
            return Err(Error::TaskPanicked);
        }
        Ok(())
    }

    /// Start order of every item so far, as (enqueue sequence, kind).
    pub fn start_log(&self) -> Vec<(u64, ItemKind)> {
        self.owner.shared.state.lock().started.clone()
    }

    /// Stops the worker. Fails with `QueueBusy` while items are pending.
    pub fn destroy(self) -> Result<()> {
        if self.pending() > 0 {
            return Err(Error::QueueBusy);
        }
        let handle = {
            let shared = &self.owner.shared;
            shared.state.lock().shutdown = true;
            shared.work_ready.notify_all();
            self.owner.worker.lock().take()
        };
        if let Some(h) = handle {
            h.join().map_err(|_| Error::TaskPanicked)?;
        }
        Ok(())
    }

    /// Host-to-device (or device-to-host) copy executed in queue order.
    pub fn enqueue_copy<T: Elem>(&self, src: &DeviceBuffer<T>, dst: &DeviceBuffer<T>) {
        let (src, dst) = (src.clone(), dst.clone());
        self.enqueue_task(move || {
            let data = src.to_vec();
            let mut out = dst.data.lock();
            let n = data.len().min(out.len());
            out[..n].copy_from_slice(&data[..n]);
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Host,
    Device,
}

/// A buffer standing in for host or device memory. Clones share storage.
#[derive(Debug, Clone)]
pub struct DeviceBuffer<T> {
    data: Arc<Mutex<Vec<T>>>,
    location: Location,
}

impl<T: Elem + Default> DeviceBuffer<T> {
    pub fn zeroed(len: usize, location: Location) -> Self {
        Self::from_vec(vec![T::default(); len], location)
    }
}

impl<T: Elem> DeviceBuffer<T> {
    pub fn from_vec(data: Vec<T>, location: Location) -> Self {
        Self {
            data: Arc::new(Mutex::new(data)),
            location,
        }
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn len(&self) -> usize {
        self.data.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.lock().clone()
    }

    pub fn with<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.data.lock())
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut [T]) -> R) -> R {
        f(&mut self.data.lock())
    }

    fn write_bytes(&self, bytes: &[u8]) {
        let vals = unpack::<T>(bytes);
        let mut out = self.data.lock();
        let n = vals.len().min(out.len());
        out[..n].copy_from_slice(&vals[..n]);
    }
}

fn check_count<T>(buf: &DeviceBuffer<T>, count: usize) -> Result<()>
where
    T: Elem,
{
    if count > buf.len() {
        Err(Error::InvalidCount(count as i64))
    } else {
        Ok(())
    }
}

impl Communicator {
    /// The queue and stream id behind an enqueue-capable communicator.
    fn enqueue_target(&self) -> Result<(ExecQueue, u64)> {
        self.inner.check_live()?;
        if self.kind() != CommKind::Stream || self.stream_kind() != StreamKind::ExecQueue {
            return Err(Error::NotEnqueueComm);
        }
        let stream = &self.inner.locals[0].stream;
        let queue = stream.queue().cloned().ok_or(Error::NotEnqueueComm)?;
        Ok((queue, stream.id()))
    }

    /// Enqueues a send of the first `count` elements of `buf`. The queue
    /// reads `buf` when the item runs, not when it is enqueued.
    pub fn send_enqueue<T: Elem>(
        &self,
        buf: &DeviceBuffer<T>,
        count: usize,
        dest: i32,
        tag: i32,
    ) -> Result<()> {
        let (queue, _) = self.enqueue_target()?;
        let dest = self.inner.check_dest(dest)?;
        check_tag(tag)?;
        check_count(buf, count)?;
        let (comm, buf) = (self.inner.clone(), buf.clone());
        queue.push(
            ItemKind::Send,
            Box::new(move || {
                let payload = buf.with(|d| pack(&d[..count]));
                comm.isend_raw(0, dest, 0, tag, payload, None)
                    .and_then(|mut r| r.wait())
                    .expect("enqueued send failed");
            }),
        );
        Ok(())
    }

    /// Enqueues a receive into `buf`; later items see the received data.
    pub fn recv_enqueue<T: Elem>(
        &self,
        buf: &DeviceBuffer<T>,
        count: usize,
        source: i32,
        tag: i32,
    ) -> Result<()> {
        let (queue, _) = self.enqueue_target()?;
        self.inner.check_source(source)?;
        check_recv_tag(tag)?;
        check_count(buf, count)?;
        let (comm, buf) = (self.inner.clone(), buf.clone());
        queue.push(
            ItemKind::Recv,
            Box::new(move || {
                let mut req = comm
                    .irecv_raw(0, source, tag, ANY_INDEX, count * T::SIZE, None)
                    .expect("enqueued receive failed");
                req.wait().expect("enqueued receive failed");
                buf.write_bytes(&req.take_bytes().unwrap_or_default());
            }),
        );
        Ok(())
    }

    /// Enqueues a send that lets later items run once it is registered.
    /// Complete it with [`wait_enqueue`].
    pub fn isend_enqueue<T: Elem>(
        &self,
        buf: &DeviceBuffer<T>,
        count: usize,
        dest: i32,
        tag: i32,
    ) -> Result<Request> {
        let (queue, stream_id) = self.enqueue_target()?;
        let dest = self.inner.check_dest(dest)?;
        check_tag(tag)?;
        check_count(buf, count)?;
        let req = Arc::new(
            RequestInner::new(RequestKind::Send, stream_id, self.context_id(), 0)
                .for_queue(queue.id(), None),
        );
        let (comm, buf, r) = (self.inner.clone(), buf.clone(), req.clone());
        queue.push(
            ItemKind::Isend,
            Box::new(move || {
                let payload = buf.with(|d| pack(&d[..count]));
                comm.isend_raw(0, dest, 0, tag, payload, Some(r))
                    .expect("enqueued isend failed");
            }),
        );
        Ok(Request::new(req))
    }

    /// Enqueues a receive that lets later items run once it is posted. The
    /// data lands in `buf` when the matching [`wait_enqueue`] item runs.
    pub fn irecv_enqueue<T: Elem>(
        &self,
        buf: &DeviceBuffer<T>,
        count: usize,
        source: i32,
        tag: i32,
    ) -> Result<Request> {
        let (queue, stream_id) = self.enqueue_target()?;
        self.inner.check_source(source)?;
        check_recv_tag(tag)?;
        check_count(buf, count)?;
        let sink = buf.clone();
        let writer: Writer = Box::new(move |bytes| sink.write_bytes(bytes));
        let req = Arc::new(
            RequestInner::new(
                RequestKind::Recv,
                stream_id,
                self.context_id(),
                count * T::SIZE,
            )
            .for_queue(queue.id(), Some(writer)),
        );
        let (comm, r) = (self.inner.clone(), req.clone());
        queue.push(
            ItemKind::Irecv,
            Box::new(move || {
                comm.irecv_raw(0, source, tag, ANY_INDEX, count * T::SIZE, Some(r))
                    .expect("enqueued irecv failed");
            }),
        );
        Ok(Request::new(req))
    }
}

fn finish_enqueued(req: &RequestInner) {
    req.block();
    if let Some(write) = req.writer.lock().take() {
        write(&req.take_payload().unwrap_or_default());
    }
}

/// Enqueues a wait that holds the issuing queue until `request` completes.
/// Only requests created by `isend_enqueue`/`irecv_enqueue` qualify.
pub fn wait_enqueue(request: Request) -> Result<()> {
    waitall_enqueue(vec![request])
}

/// Enqueues one wait over `requests`, which must all come from the same
/// local stream.
pub fn waitall_enqueue(requests: Vec<Request>) -> Result<()> {
    let Some(first) = requests.first() else {
        return Ok(());
    };
    let queue_id = first.inner.queue_id.ok_or(Error::StreamMismatch)?;
    let stream_id = first.inner.stream_id;
    if requests
        .iter()
        .any(|r| r.inner.queue_id != Some(queue_id) || r.inner.stream_id != stream_id)
    {
        return Err(Error::StreamMismatch);
    }
    if requests.iter().any(Request::is_consumed) {
        return Err(Error::InvalidRequest);
    }
    let queue = ExecQueue::from_handle(queue_id).ok_or(Error::StreamMismatch)?;
    let inners: Vec<Arc<RequestInner>> = requests.into_iter().map(|r| r.inner).collect();
    queue.push(
        ItemKind::Wait,
        Box::new(move || inners.iter().for_each(|r| finish_enqueued(r))),
    );
    Ok(())
}
