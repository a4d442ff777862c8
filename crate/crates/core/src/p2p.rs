//! Point-to-point operations.
//!
//! Sends are eager: the frame is injected into the destination endpoint's
//! inbound channel before `isend` returns, so send requests are complete on
//! return. Receives complete when progress on their endpoint matches them.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::comm::{check_src_index, CommInner, CommKind, Communicator};
use crate::datatype::{pack, Elem};
use crate::error::{Error, Result};
use crate::fabric::wire::Envelope;
use crate::fabric::{MatchPattern, ANY_INDEX, ANY_SOURCE};
use crate::request::{send_status, Request, RequestInner, RequestKind, Status};

impl CommInner {
    pub(crate) fn isend_raw(
        &self,
        local_idx: usize,
        dest: u32,
        dst_idx: usize,
        tag: i32,
        payload: Vec<u8>,
        req: Option<Arc<RequestInner>>,
    ) -> Result<Request> {
        let slot = &self.locals[local_idx];
        let req = req.unwrap_or_else(|| {
            Arc::new(RequestInner::new(
                RequestKind::Send,
                slot.stream.id(),
                self.context_id,
                0,
            ))
        });
        let ep = self.proc.endpoint(self.send_endpoint(local_idx)).clone();
        let dst_ep = self.target_endpoint(dest, dst_idx);
        let src_idx = self.wire_index(local_idx);
        let len = payload.len();
        {
            let mut guard = ep.enter();
            let seq = slot.seq.fetch_add(1, Ordering::Relaxed) + 1;
            let env = Envelope {
                context_id: self.context_id,
                src_rank: self.rank,
                src_idx,
                dst_idx: self.wire_index(dst_idx),
                tag,
                seq,
                payload_len: len as u64,
            };
            self.proc
                .network
                .push(self.group[dest as usize], dst_ep, env.frame(&payload));
            guard.stats.frames_out += 1;
        }
        let _ = req.endpoint.set(ep);
        req.complete(send_status(self.rank, src_idx, tag, len), Vec::new());
        Ok(Request::new(req))
    }

    pub(crate) fn irecv_raw(
        &self,
        local_idx: usize,
        source: i32,
        tag: i32,
        src_idx: i32,
        capacity: usize,
        req: Option<Arc<RequestInner>>,
    ) -> Result<Request> {
        let slot = &self.locals[local_idx];
        let req = req.unwrap_or_else(|| {
            Arc::new(RequestInner::new(
                RequestKind::Recv,
                slot.stream.id(),
                self.context_id,
                capacity,
            ))
        });
        let ep = self.proc.endpoint(self.recv_endpoint(local_idx)).clone();
        let pattern = MatchPattern {
            context_id: self.context_id,
            source,
            tag,
            src_idx,
            dst_idx: self.wire_index(local_idx),
        };
        let _ = req.endpoint.set(ep.clone());
        ep.enter().post(pattern, req.clone());
        Ok(Request::new(req))
    }

    pub(crate) fn check_dest(&self, dest: i32) -> Result<u32> {
        if dest < 0 || dest as u32 >= self.size() {
            Err(Error::InvalidRank(dest))
        } else {
            Ok(dest as u32)
        }
    }

    pub(crate) fn check_source(&self, source: i32) -> Result<()> {
        if source == ANY_SOURCE || (source >= 0 && (source as u32) < self.size()) {
            Ok(())
        } else {
            Err(Error::InvalidRank(source))
        }
    }

    pub(crate) fn check_conventional(&self) -> Result<()> {
        self.check_live()?;
        if self.kind == CommKind::Multiplex {
            return Err(Error::MultiplexComm);
        }
        Ok(())
    }
}

pub(crate) fn check_tag(tag: i32) -> Result<()> {
    if tag < 0 {
        Err(Error::InvalidTag(tag))
    } else {
        Ok(())
    }
}

pub(crate) fn check_recv_tag(tag: i32) -> Result<()> {
    if tag < 0 && tag != crate::fabric::ANY_TAG {
        Err(Error::InvalidTag(tag))
    } else {
        Ok(())
    }
}

impl Communicator {
    /// Nonblocking send of `buf` to `dest`. On a stream communicator the
    /// call must come from the attached stream's serial context.
    pub fn isend<T: Elem>(&self, buf: &[T], dest: i32, tag: i32) -> Result<Request> {
        let inner = &self.inner;
        inner.check_conventional()?;
        let dest = inner.check_dest(dest)?;
        check_tag(tag)?;
        inner.isend_raw(0, dest, 0, tag, pack(buf), None)
    }

    pub fn send<T: Elem>(&self, buf: &[T], dest: i32, tag: i32) -> Result<Status> {
        self.isend(buf, dest, tag)?.wait()
    }

    /// Nonblocking receive of up to `capacity` elements. `source` may be
    /// [`ANY_SOURCE`], `tag` may be [`crate::ANY_TAG`].
    pub fn irecv<T: Elem>(&self, capacity: usize, source: i32, tag: i32) -> Result<Request> {
        let inner = &self.inner;
        inner.check_conventional()?;
        inner.check_source(source)?;
        check_recv_tag(tag)?;
        inner.irecv_raw(0, source, tag, ANY_INDEX, capacity * T::SIZE, None)
    }

    pub fn recv<T: Elem>(
        &self,
        capacity: usize,
        source: i32,
        tag: i32,
    ) -> Result<(Vec<T>, Status)> {
        let mut req = self.irecv::<T>(capacity, source, tag)?;
        let status = req.wait()?;
        Ok((req.take_data().unwrap_or_default(), status))
    }

    /// Indexed send on a multiplex communicator: from local stream `src_idx`
    /// to stream `dst_idx` of `dest`.
    pub fn stream_isend<T: Elem>(
        &self,
        buf: &[T],
        dest: i32,
        tag: i32,
        src_idx: i32,
        dst_idx: i32,
    ) -> Result<Request> {
        let inner = &self.inner;
        inner.check_live()?;
        if inner.kind != CommKind::Multiplex {
            return Err(Error::NotMultiplex);
        }
        let dest = inner.check_dest(dest)?;
        check_tag(tag)?;
        if src_idx < 0 || src_idx as usize >= inner.locals.len() {
            return Err(Error::InvalidIndex(src_idx));
        }
        if dst_idx < 0 || dst_idx as usize >= inner.table[dest as usize].len() {
            return Err(Error::InvalidIndex(dst_idx));
        }
        inner.isend_raw(
            src_idx as usize,
            dest,
            dst_idx as usize,
            tag,
            pack(buf),
            None,
        )
    }

    pub fn stream_send<T: Elem>(
        &self,
        buf: &[T],
        dest: i32,
        tag: i32,
        src_idx: i32,
        dst_idx: i32,
    ) -> Result<Status> {
        self.stream_isend(buf, dest, tag, src_idx, dst_idx)?.wait()
    }

    /// Indexed receive posted on local stream `dst_idx`. `src_idx` may be
    /// [`ANY_INDEX`]; `dst_idx` must be concrete.
    pub fn stream_irecv<T: Elem>(
        &self,
        capacity: usize,
        source: i32,
        tag: i32,
        src_idx: i32,
        dst_idx: i32,
    ) -> Result<Request> {
        let inner = &self.inner;
        inner.check_live()?;
        if inner.kind != CommKind::Multiplex {
            return Err(Error::NotMultiplex);
        }
        if dst_idx == ANY_INDEX {
            return Err(Error::WildcardDst);
        }
        if dst_idx < 0 || dst_idx as usize >= inner.locals.len() {
            return Err(Error::InvalidIndex(dst_idx));
        }
        inner.check_source(source)?;
        check_recv_tag(tag)?;
        check_src_index(src_idx)?;
        if src_idx >= 0
            && source != ANY_SOURCE
            && src_idx as usize >= inner.table[source as usize].len()
        {
            return Err(Error::InvalidIndex(src_idx));
        }
        inner.irecv_raw(
            dst_idx as usize,
            source,
            tag,
            src_idx,
            capacity * T::SIZE,
            None,
        )
    }

    pub fn stream_recv<T: Elem>(
        &self,
        capacity: usize,
        source: i32,
        tag: i32,
        src_idx: i32,
        dst_idx: i32,
    ) -> Result<(Vec<T>, Status)> {
        let mut req = self.stream_irecv::<T>(capacity, source, tag, src_idx, dst_idx)?;
        let status = req.wait()?;
        Ok((req.take_data().unwrap_or_default(), status))
    }
}
