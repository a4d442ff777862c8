//! The endpoint fabric: logical processes, their endpoint pools, the
//! loopback transport between them, and progress.
//!
//! All logical processes of a [`Fabric`] live in the current OS process.
//! Each one owns `implicit + explicit` endpoints; endpoint ids `0..implicit`
//! form the implicit pool and the remaining ids the explicit pool.

pub mod endpoint;
mod pool;
pub mod wire;

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

pub use endpoint::{
    Endpoint, EndpointStats, MatchPattern, PoolClass, RouteOutcome, ANY_INDEX, ANY_SOURCE, ANY_TAG,
};
pub use pool::AcquireMode;

use crate::comm::ContextIds;
use crate::config::{Exclusion, ExclusionMode, FabricConfig, ImplicitPolicy, ResolvedConfig};
use crate::error::{Error, Result};
use endpoint::Inbox;
use pool::ExplicitPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Sender,
    Receiver,
}

/// Picks an implicit-pool endpoint for traffic that names no stream.
///
/// `one_to_one` hashes the context id, so both sides agree without talking.
/// `sender_any_recv_default` lets senders rotate while every receive lands on
/// endpoint 0.
pub fn select_implicit_endpoint(
    policy: ImplicitPolicy,
    implicit_pool_size: usize,
    context_id: u32,
    role: Role,
    rotor: &AtomicUsize,
) -> usize {
    match (policy, role) {
        (ImplicitPolicy::OneToOne, _) => context_id as usize % implicit_pool_size,
        (ImplicitPolicy::SenderAnyRecvDefault, Role::Sender) => {
            rotor.fetch_add(1, Ordering::Relaxed) % implicit_pool_size
        }
        (ImplicitPolicy::SenderAnyRecvDefault, Role::Receiver) => 0,
    }
}

/// Inboxes of every endpoint of every process, indexed `[rank][endpoint]`.
pub(crate) struct Network {
    inboxes: Vec<Vec<Arc<Inbox>>>,
}

impl Network {
    pub(crate) fn push(&self, rank: u32, endpoint: usize, frame: Vec<u8>) {
        self.inboxes[rank as usize][endpoint].push(frame);
    }
}

/// A set of logical processes connected by loopback channels.
pub struct Fabric {
    procs: Vec<Arc<Process>>,
    config: ResolvedConfig,
}

impl Fabric {
    pub fn new(nprocs: usize, config: FabricConfig) -> Result<Self> {
        if nprocs == 0 {
            return Err(Error::ConfigInvalid(
                "a fabric needs at least one process".into(),
            ));
        }
        let cfg = config.resolve()?;
        let total = cfg.total_pool_size();
        let inboxes: Vec<Vec<Arc<Inbox>>> = (0..nprocs)
            .map(|_| (0..total).map(|_| Arc::new(Inbox::default())).collect())
            .collect();
        let network = Arc::new(Network { inboxes });
        let procs = (0..nprocs)
            .map(|rank| Process::new(rank as u32, nprocs as u32, cfg, network.clone()))
            .collect();
        Ok(Self { procs, config: cfg })
    }

    pub fn size(&self) -> usize {
        self.procs.len()
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.config
    }

    pub fn process(&self, rank: usize) -> Arc<Process> {
        self.procs[rank].clone()
    }

    pub fn processes(&self) -> &[Arc<Process>] {
        &self.procs
    }

    /// Runs `f` once per process, each on its own thread, and collects the
    /// results in rank order.
    pub fn run<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(Arc<Process>) -> R + Sync,
    {
        let f = &f;
        std::thread::scope(|s| {
            let handles: Vec<_> = self
                .procs
                .iter()
                .map(|p| {
                    let p = p.clone();
                    s.spawn(move || f(p))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rank thread panicked"))
                .collect()
        })
    }
}

/// A held explicit endpoint.
#[derive(Debug)]
pub struct Lease {
    endpoint: Arc<Endpoint>,
    mode: AcquireMode,
    released: AtomicBool,
}

impl Lease {
    pub fn endpoint(&self) -> &Arc<Endpoint> {
        &self.endpoint
    }

    pub fn mode(&self) -> AcquireMode {
        self.mode
    }

    pub fn is_released(&self) -> bool {
        self.released.load(Ordering::Acquire)
    }
}

/// One logical process (rank) of a fabric.
pub struct Process {
    rank: u32,
    size: u32,
    config: ResolvedConfig,
    endpoints: Vec<Arc<Endpoint>>,
    pub(crate) network: Arc<Network>,
    pool: Mutex<ExplicitPool>,
    sender_rotor: AtomicUsize,
    pub(crate) context_ids: Mutex<ContextIds>,
    pub(crate) next_stream_id: AtomicU64,
    pub(crate) live_streams: AtomicUsize,
    pub(crate) world_seq: Arc<AtomicU64>,
}

impl std::fmt::Debug for Process {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Process")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .finish()
    }
}

impl Process {
    fn new(rank: u32, size: u32, config: ResolvedConfig, network: Arc<Network>) -> Arc<Self> {
        let global = Arc::new(Mutex::new(()));
        let base = match config.exclusion {
            ExclusionMode::Global => Exclusion::Global,
            ExclusionMode::PerEndpoint => Exclusion::PerEndpoint,
        };
        let endpoints = (0..config.total_pool_size())
            .map(|id| {
                let (class, pool_index) = if id < config.implicit_pool_size {
                    (PoolClass::Implicit, id)
                } else {
                    (PoolClass::Explicit, id - config.implicit_pool_size)
                };
                Arc::new(Endpoint::new(
                    id,
                    pool_index,
                    class,
                    network.inboxes[rank as usize][id].clone(),
                    base,
                    global.clone(),
                    config.verify_serial,
                ))
            })
            .collect();
        Arc::new(Self {
            rank,
            size,
            config,
            endpoints,
            network,
            pool: Mutex::new(ExplicitPool::new(config.explicit_pool_size)),
            sender_rotor: AtomicUsize::new(0),
            context_ids: Mutex::new(ContextIds::new()),
            next_stream_id: AtomicU64::new(1),
            live_streams: AtomicUsize::new(0),
            world_seq: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.config
    }

    pub fn endpoint(&self, id: usize) -> &Arc<Endpoint> {
        &self.endpoints[id]
    }

    pub fn endpoints(&self) -> &[Arc<Endpoint>] {
        &self.endpoints
    }

    pub fn implicit_endpoints(&self) -> &[Arc<Endpoint>] {
        &self.endpoints[..self.config.implicit_pool_size]
    }

    pub fn select_implicit_endpoint(&self, context_id: u32, role: Role) -> usize {
        select_implicit_endpoint(
            self.config.implicit_policy,
            self.config.implicit_pool_size,
            context_id,
            role,
            &self.sender_rotor,
        )
    }

    /// Takes an explicit-pool endpoint.
    ///
    /// Exclusive endpoints under per-endpoint exclusion run with no
    /// synchronization; the holder's serial context protects them.
    pub fn endpoint_acquire(&self, mode: AcquireMode) -> Result<Lease> {
        let idx = self.pool.lock().acquire(mode)?;
        let endpoint = self.endpoints[self.config.implicit_pool_size + idx].clone();
        let regime = match (self.config.exclusion, mode) {
            (ExclusionMode::Global, _) => Exclusion::Global,
            (ExclusionMode::PerEndpoint, AcquireMode::Exclusive) => Exclusion::None,
            (ExclusionMode::PerEndpoint, AcquireMode::Shared) => Exclusion::PerEndpoint,
        };
        if mode == AcquireMode::Exclusive || self.pool.lock().share_count(idx) == 1 {
            endpoint.set_exclusion(regime);
        }
        Ok(Lease {
            endpoint,
            mode,
            released: AtomicBool::new(false),
        })
    }

    /// Returns an endpoint to the pool. Fails with `PendingOps` while
    /// receives issued by `stream_id` (or, for exclusive leases, by anyone)
    /// are still unmatched.
    pub fn endpoint_release(&self, lease: &Lease, stream_id: Option<u64>) -> Result<()> {
        if lease.is_released() {
            return Err(Error::InvalidStream);
        }
        let ep = &lease.endpoint;
        {
            let mut guard = ep.enter();
            guard.drain_inbox();
            let pending = match (lease.mode, stream_id) {
                (AcquireMode::Shared, Some(id)) => guard.has_pending_for_stream(id),
                _ => !guard.posted.is_empty(),
            };
            if pending {
                return Err(Error::PendingOps);
            }
        }
        let mut pool = self.pool.lock();
        let now_free = pool.release(ep.pool_index(), lease.mode);
        if now_free {
            ep.reset();
            ep.set_exclusion(match self.config.exclusion {
                ExclusionMode::Global => Exclusion::Global,
                ExclusionMode::PerEndpoint => Exclusion::PerEndpoint,
            });
        }
        lease.released.store(true, Ordering::Release);
        Ok(())
    }

    /// Number of explicit endpoints currently held in any mode.
    pub fn explicit_endpoints_held(&self) -> usize {
        self.pool.lock().held()
    }

    /// Drains inbound traffic on the given endpoints only.
    pub fn progress_poll(&self, endpoint_ids: &[usize]) -> usize {
        endpoint_ids
            .iter()
            .map(|&id| self.endpoints[id].progress())
            .sum()
    }

    pub fn live_streams(&self) -> usize {
        self.live_streams.load(Ordering::Acquire)
    }

    pub fn live_context_ids(&self) -> usize {
        self.context_ids.lock().live()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_one_is_symmetric() {
        let rotor = AtomicUsize::new(0);
        for ctx in 0..8u32 {
            let s =
                select_implicit_endpoint(ImplicitPolicy::OneToOne, 4, ctx, Role::Sender, &rotor);
            let r =
                select_implicit_endpoint(ImplicitPolicy::OneToOne, 4, ctx, Role::Receiver, &rotor);
            assert_eq!(s, r);
            assert_eq!(s, ctx as usize % 4);
        }
        assert_eq!(
            select_implicit_endpoint(ImplicitPolicy::OneToOne, 4, 6, Role::Sender, &rotor),
            2
        );
    }

    #[test]
    fn sender_any_rotates_receiver_fixed() {
        let rotor = AtomicUsize::new(0);
        let p = ImplicitPolicy::SenderAnyRecvDefault;
        let sends: Vec<_> = (0..5)
            .map(|_| select_implicit_endpoint(p, 3, 9, Role::Sender, &rotor))
            .collect();
        assert_eq!(sends, vec![0, 1, 2, 0, 1]);
        for ctx in 0..10 {
            assert_eq!(
                select_implicit_endpoint(p, 3, ctx, Role::Receiver, &rotor),
                0
            );
        }
    }

    #[test]
    fn release_refused_while_receive_posted() {
        use crate::request::{RequestInner, RequestKind};
        let f = Fabric::new(1, FabricConfig::new().explicit_pool_size(1)).unwrap();
        let p = f.process(0);
        let lease = p.endpoint_acquire(AcquireMode::Exclusive).unwrap();
        let pattern = MatchPattern {
            context_id: 3,
            source: 0,
            tag: 1,
            src_idx: -1,
            dst_idx: -1,
        };
        let req = Arc::new(RequestInner::new(RequestKind::Recv, 1, 3, 8));
        assert!(lease
            .endpoint()
            .enter()
            .post(pattern, req.clone())
            .is_none());
        assert_eq!(p.endpoint_release(&lease, None), Err(Error::PendingOps));
        assert!(!lease.is_released());
        assert_eq!(p.explicit_endpoints_held(), 1);

        let env = wire::Envelope {
            context_id: 3,
            src_rank: 0,
            src_idx: -1,
            dst_idx: -1,
            tag: 1,
            seq: 1,
            payload_len: 0,
        };
        lease.endpoint().route_and_match(env, vec![9]);
        assert!(req.is_complete());
        p.endpoint_release(&lease, None).unwrap();
        assert_eq!(p.explicit_endpoints_held(), 0);
        assert_eq!(p.endpoint_release(&lease, None), Err(Error::InvalidStream));
    }
}
