//! Communicators: the world communicator, duplicates and splits, stream
//! communicators and multiplex stream communicators.
//!
//! Every construction is collective over the parent. Members allgather
//! their free context-id masks together with their local stream endpoints;
//! the lowest id free everywhere becomes the new context id, and the
//! gathered endpoints become the remote endpoint table.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fabric::wire::NO_INDEX;
use crate::fabric::{Process, Role, ANY_INDEX};
use crate::stream::{Stream, StreamKind};

/// Tags below zero are reserved for collective traffic.
pub(crate) const TAG_ALLGATHER: i32 = -10;
pub(crate) const TAG_BARRIER: i32 = -11;

const CONTEXT_WORDS: usize = 4;
pub const MAX_CONTEXT_IDS: usize = CONTEXT_WORDS * 64;
const MASK_BYTES: usize = CONTEXT_WORDS * 8;

/// Per-process set of free context ids. Id 0 belongs to the world.
#[derive(Debug, Clone)]
pub(crate) struct ContextIds {
    free: [u64; CONTEXT_WORDS],
}

impl ContextIds {
    pub(crate) fn new() -> Self {
        let mut free = [u64::MAX; CONTEXT_WORDS];
        free[0] &= !1;
        Self { free }
    }

    fn snapshot(&self) -> [u8; MASK_BYTES] {
        let mut out = [0u8; MASK_BYTES];
        for (i, w) in self.free.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    fn mark_used(&mut self, id: u32) {
        self.free[id as usize / 64] &= !(1u64 << (id % 64));
    }

    fn release(&mut self, id: u32) {
        self.free[id as usize / 64] |= 1u64 << (id % 64);
    }

    pub(crate) fn live(&self) -> usize {
        MAX_CONTEXT_IDS
            - self
                .free
                .iter()
                .map(|w| w.count_ones() as usize)
                .sum::<usize>()
    }
}

fn lowest_common(masks: &[&[u8]]) -> Option<u32> {
    (0..CONTEXT_WORDS).find_map(|w| {
        let word = masks.iter().fold(u64::MAX, |acc, m| {
            acc & u64::from_le_bytes(m[w * 8..w * 8 + 8].try_into().unwrap())
        });
        (word != 0).then(|| (w * 64) as u32 + word.trailing_zeros())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommKind {
    /// No streams attached; endpoints come from the implicit policy.
    Legacy,
    /// One local stream (possibly the null stream).
    Stream,
    /// An indexed list of local streams.
    Multiplex,
}

/// Where a remote (rank, index) receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// Process-wide endpoint id on the remote side.
    Explicit(usize),
    /// The remote side has no stream; use the implicit receiver endpoint.
    Implicit,
}

impl Target {
    fn encode(self) -> i32 {
        match self {
            Target::Explicit(id) => id as i32,
            Target::Implicit => -1,
        }
    }

    fn decode(raw: i32) -> Self {
        if raw < 0 {
            Target::Implicit
        } else {
            Target::Explicit(raw as usize)
        }
    }

    fn of(stream: &Stream) -> Self {
        stream
            .endpoint()
            .map_or(Target::Implicit, |ep| Target::Explicit(ep.id()))
    }
}

pub(crate) struct LocalSlot {
    pub(crate) stream: Stream,
    pub(crate) seq: Arc<AtomicU64>,
}

pub(crate) struct CommInner {
    pub(crate) proc: Arc<Process>,
    pub(crate) context_id: u32,
    /// World ranks of the members, by communicator rank.
    pub(crate) group: Vec<u32>,
    pub(crate) rank: u32,
    pub(crate) kind: CommKind,
    pub(crate) locals: Vec<LocalSlot>,
    /// Receive target of every (rank, index).
    pub(crate) table: Vec<Vec<Target>>,
    pub(crate) freed: AtomicBool,
}

impl CommInner {
    pub(crate) fn check_live(&self) -> Result<()> {
        if self.freed.load(Ordering::Relaxed) {
            Err(Error::InvalidComm)
        } else {
            Ok(())
        }
    }

    pub(crate) fn size(&self) -> u32 {
        self.group.len() as u32
    }

    /// Endpoint id that (dest, dst_idx) receives on, as seen from here.
    pub(crate) fn target_endpoint(&self, dest: u32, dst_idx: usize) -> usize {
        match self.table[dest as usize][dst_idx] {
            Target::Explicit(id) => id,
            Target::Implicit => self
                .proc
                .select_implicit_endpoint(self.context_id, Role::Receiver),
        }
    }

    /// Endpoint the local slot posts receives on.
    pub(crate) fn recv_endpoint(&self, local_idx: usize) -> usize {
        match self.locals[local_idx].stream.endpoint() {
            Some(ep) => ep.id(),
            None => self
                .proc
                .select_implicit_endpoint(self.context_id, Role::Receiver),
        }
    }

    /// Endpoint the local slot injects sends from.
    pub(crate) fn send_endpoint(&self, local_idx: usize) -> usize {
        match self.locals[local_idx].stream.endpoint() {
            Some(ep) => ep.id(),
            None => self
                .proc
                .select_implicit_endpoint(self.context_id, Role::Sender),
        }
    }

    pub(crate) fn wire_index(&self, idx: usize) -> i32 {
        match self.kind {
            CommKind::Multiplex => idx as i32,
            _ => NO_INDEX,
        }
    }

    /// Gathers `data` from every member, in rank order. Runs on local
    /// index 0 and remote index 0 of every member.
    pub(crate) fn allgather_raw(&self, data: &[u8], tag: i32) -> Result<Vec<Vec<u8>>> {
        let me = self.rank;
        let n = self.size();
        let peer_idx = match self.kind {
            CommKind::Multiplex => 0,
            _ => NO_INDEX,
        };
        for dest in (0..n).filter(|&r| r != me) {
            self.isend_raw(0, dest, 0, tag, data.to_vec(), None)?;
        }
        let mut recvs = Vec::with_capacity(n as usize);
        for src in 0..n {
            if src == me {
                recvs.push(None);
            } else {
                recvs.push(Some(self.irecv_raw(
                    0,
                    src as i32,
                    tag,
                    peer_idx,
                    usize::MAX,
                    None,
                )?));
            }
        }
        recvs
            .into_iter()
            .map(|req| match req {
                None => Ok(data.to_vec()),
                Some(mut req) => {
                    req.wait()?;
                    Ok(req.take_bytes().unwrap_or_default())
                }
            })
            .collect()
    }

    /// Agrees on a fresh context id with every member of this communicator
    /// and exchanges `extra` bytes. Members passing `member = false` take part
    /// in the agreement without reserving the id.
    fn agree(&self, extra: &[u8], member: bool) -> Result<(u32, Vec<Vec<u8>>)> {
        let mut contribution = self.proc.context_ids.lock().snapshot().to_vec();
        contribution.extend_from_slice(extra);
        let gathered = self.allgather_raw(&contribution, TAG_ALLGATHER)?;
        let masks: Vec<&[u8]> = gathered.iter().map(|g| &g[..MASK_BYTES]).collect();
        let id = lowest_common(&masks)
            .ok_or_else(|| Error::ConfigInvalid("no context id is free on every member".into()))?;
        if member {
            self.proc.context_ids.lock().mark_used(id);
        }
        let extras = gathered.iter().map(|g| g[MASK_BYTES..].to_vec()).collect();
        Ok((id, extras))
    }
}

fn encode_targets(targets: &[Target]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * targets.len());
    out.extend_from_slice(&(targets.len() as u32).to_le_bytes());
    for t in targets {
        out.extend_from_slice(&t.encode().to_le_bytes());
    }
    out
}

fn decode_targets(raw: &[u8]) -> Vec<Target> {
    let n = u32::from_le_bytes(raw[..4].try_into().unwrap()) as usize;
    (0..n)
        .map(|i| {
            Target::decode(i32::from_le_bytes(
                raw[4 + 4 * i..8 + 4 * i].try_into().unwrap(),
            ))
        })
        .collect()
}

/// Handle to a communicator. Clones refer to the same communicator.
#[derive(Clone)]
pub struct Communicator {
    pub(crate) inner: Arc<CommInner>,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("context_id", &self.inner.context_id)
            .field("rank", &self.inner.rank)
            .field("size", &self.inner.size())
            .field("kind", &self.inner.kind)
            .finish()
    }
}

impl Process {
    /// The predefined communicator over every process of the fabric.
    pub fn world(self: &Arc<Self>) -> Communicator {
        let size = self.size();
        Communicator {
            inner: Arc::new(CommInner {
                proc: self.clone(),
                context_id: 0,
                group: (0..size).collect(),
                rank: self.rank(),
                kind: CommKind::Legacy,
                locals: vec![LocalSlot {
                    stream: Stream::null(),
                    seq: self.world_seq.clone(),
                }],
                table: vec![vec![Target::Implicit]; size as usize],
                freed: AtomicBool::new(false),
            }),
        }
    }
}

impl Communicator {
    pub fn rank(&self) -> u32 {
        self.inner.rank
    }

    pub fn size(&self) -> u32 {
        self.inner.size()
    }

    pub fn context_id(&self) -> u32 {
        self.inner.context_id
    }

    pub fn kind(&self) -> CommKind {
        self.inner.kind
    }

    pub fn process(&self) -> &Arc<Process> {
        &self.inner.proc
    }

    /// World rank of communicator rank `rank`.
    pub fn world_rank(&self, rank: u32) -> u32 {
        self.inner.group[rank as usize]
    }

    pub fn is_freed(&self) -> bool {
        self.inner.freed.load(Ordering::Acquire)
    }

    /// Number of local streams (1 for legacy and stream communicators).
    pub fn local_count(&self) -> usize {
        self.inner.locals.len()
    }

    pub fn local_stream(&self, idx: usize) -> Option<&Stream> {
        self.inner.locals.get(idx).map(|s| &s.stream)
    }

    /// Number of streams member `rank` attached.
    pub fn remote_count(&self, rank: u32) -> usize {
        self.inner.table[rank as usize].len()
    }

    pub fn remote_target(&self, rank: u32, idx: usize) -> Target {
        self.inner.table[rank as usize][idx]
    }

    /// Endpoint id a send to (rank, idx) is routed to.
    pub fn route_endpoint(&self, rank: u32, idx: usize) -> usize {
        self.inner.target_endpoint(rank, idx)
    }

    /// Endpoint id receives on local index `idx` are posted to.
    pub fn recv_endpoint(&self, idx: usize) -> usize {
        self.inner.recv_endpoint(idx)
    }

    /// Endpoint id sends from local index `idx` leave through (sampled; the
    /// sender-any policy rotates).
    pub fn send_endpoint(&self, idx: usize) -> usize {
        self.inner.send_endpoint(idx)
    }

    fn derive(
        &self,
        context_id: u32,
        group: Vec<u32>,
        rank: u32,
        kind: CommKind,
        locals: Vec<Stream>,
        table: Vec<Vec<Target>>,
    ) -> Result<Communicator> {
        for (i, s) in locals.iter().enumerate() {
            if let Err(e) = s.attach() {
                locals[..i].iter().for_each(Stream::detach);
                return Err(e);
            }
        }
        Ok(Communicator {
            inner: Arc::new(CommInner {
                proc: self.inner.proc.clone(),
                context_id,
                group,
                rank,
                kind,
                locals: locals
                    .into_iter()
                    .map(|stream| LocalSlot {
                        stream,
                        seq: Arc::new(AtomicU64::new(0)),
                    })
                    .collect(),
                table,
                freed: AtomicBool::new(false),
            }),
        })
    }

    /// Collective duplicate: same group, new context, no streams.
    pub fn dup(&self) -> Result<Communicator> {
        self.inner.check_live()?;
        let (id, _) = self.inner.agree(&[], true)?;
        let n = self.size() as usize;
        self.derive(
            id,
            self.inner.group.clone(),
            self.rank(),
            CommKind::Legacy,
            vec![Stream::null()],
            vec![vec![Target::Implicit]; n],
        )
    }

    /// Collective split. Members passing the same `color` form one new
    /// communicator ordered by `(key, parent rank)`; `None` opts out.
    pub fn split(&self, color: Option<u32>, key: i32) -> Result<Option<Communicator>> {
        self.inner.check_live()?;
        let mut extra = Vec::with_capacity(9);
        extra.push(color.is_some() as u8);
        extra.extend_from_slice(&color.unwrap_or(0).to_le_bytes());
        extra.extend_from_slice(&key.to_le_bytes());
        let (id, extras) = self.inner.agree(&extra, color.is_some())?;
        let Some(color) = color else { return Ok(None) };
        let mut members: Vec<(i32, u32)> = extras
            .iter()
            .enumerate()
            .filter(|(_, e)| e[0] == 1 && u32::from_le_bytes(e[1..5].try_into().unwrap()) == color)
            .map(|(r, e)| (i32::from_le_bytes(e[5..9].try_into().unwrap()), r as u32))
            .collect();
        members.sort();
        let group: Vec<u32> = members
            .iter()
            .map(|&(_, r)| self.inner.group[r as usize])
            .collect();
        let rank = members.iter().position(|&(_, r)| r == self.rank()).unwrap() as u32;
        let n = group.len();
        self.derive(
            id,
            group,
            rank,
            CommKind::Legacy,
            vec![Stream::null()],
            vec![vec![Target::Implicit]; n],
        )
        .map(Some)
    }

    /// Collective: attaches `stream` (which may be [`crate::STREAM_NULL`]) as this
    /// member's local stream of a new communicator. Any stream attached to
    /// `self` is not inherited.
    pub fn stream_comm_create(&self, stream: &Stream) -> Result<Communicator> {
        self.inner.check_live()?;
        self.check_stream(stream)?;
        let (id, extras) = self
            .inner
            .agree(&encode_targets(&[Target::of(stream)]), true)?;
        let table = extras.iter().map(|e| decode_targets(e)).collect();
        self.derive(
            id,
            self.inner.group.clone(),
            self.rank(),
            CommKind::Stream,
            vec![stream.clone()],
            table,
        )
        .inspect_err(|_| self.inner.proc.context_ids.lock().release(id))
    }

    /// Collective: attaches an indexed list of local streams. Members may
    /// pass lists of different lengths.
    pub fn stream_comm_create_multiple(&self, streams: &[Stream]) -> Result<Communicator> {
        self.inner.check_live()?;
        if streams.is_empty() {
            return Err(Error::EmptyList);
        }
        for s in streams {
            self.check_stream(s)?;
        }
        let targets: Vec<Target> = streams.iter().map(Target::of).collect();
        let (id, extras) = self.inner.agree(&encode_targets(&targets), true)?;
        let table = extras.iter().map(|e| decode_targets(e)).collect();
        self.derive(
            id,
            self.inner.group.clone(),
            self.rank(),
            CommKind::Multiplex,
            streams.to_vec(),
            table,
        )
        .inspect_err(|_| self.inner.proc.context_ids.lock().release(id))
    }

    fn check_stream(&self, stream: &Stream) -> Result<()> {
        if stream.is_freed() {
            return Err(Error::InvalidStream);
        }
        match stream.process() {
            Some(p) if !Arc::ptr_eq(p, &self.inner.proc) => Err(Error::InvalidStream),
            _ => Ok(()),
        }
    }

    /// Blocks until every member has entered. Runs on the attached stream's
    /// endpoint (local index 0 on multiplex communicators).
    pub fn barrier(&self) -> Result<()> {
        self.inner.check_live()?;
        if self.size() > 1 {
            self.inner.allgather_raw(&[], TAG_BARRIER)?;
        }
        Ok(())
    }

    /// Gathers one byte string from each member, in rank order.
    pub fn allgather(&self, data: &[u8]) -> Result<Vec<Vec<u8>>> {
        self.inner.check_live()?;
        self.inner.allgather_raw(data, TAG_ALLGATHER)
    }

    /// Collective free. Fails with `PendingOps` while receives on this
    /// communicator are unmatched or enqueued work is outstanding.
    pub fn free(&self) -> Result<()> {
        let inner = &self.inner;
        inner.check_live()?;
        if inner.context_id == 0 {
            return Err(Error::InvalidComm);
        }
        let endpoints = self.local_endpoints();
        for &ep in &endpoints {
            if inner
                .proc
                .endpoint(ep)
                .enter()
                .has_pending_for_context(inner.context_id)
            {
                return Err(Error::PendingOps);
            }
        }
        if inner
            .locals
            .iter()
            .any(|s| s.stream.queue().is_some_and(|q| q.pending() > 0))
        {
            return Err(Error::PendingOps);
        }
        self.barrier()?;
        for &ep in &endpoints {
            let mut guard = inner.proc.endpoint(ep).enter();
            guard.drain_inbox();
            guard.purge_context(inner.context_id);
        }
        inner.freed.store(true, Ordering::Release);
        inner.proc.context_ids.lock().release(inner.context_id);
        inner.locals.iter().for_each(|s| s.stream.detach());
        Ok(())
    }

    fn local_endpoints(&self) -> Vec<usize> {
        let mut eps: Vec<usize> = (0..self.local_count())
            .map(|i| self.inner.recv_endpoint(i))
            .collect();
        eps.sort_unstable();
        eps.dedup();
        eps
    }

    pub(crate) fn stream_kind(&self) -> StreamKind {
        self.inner.locals[0].stream.kind()
    }
}

pub(crate) fn check_src_index(idx: i32) -> Result<()> {
    if idx == ANY_INDEX || idx >= 0 {
        Ok(())
    } else {
        Err(Error::InvalidIndex(idx))
    }
}
