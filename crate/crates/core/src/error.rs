use thiserror::Error;

/// Errors reported by the runtime.
///
/// Variants mirror the error classes a message-passing library hands back
/// to callers; none of them leave shared state half-updated.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("all explicit endpoints are held exclusively")]
    PoolExhausted,
    #[error("the explicit endpoint pool is empty")]
    NoExplicitPool,
    #[error("incomplete operations still reference the resource")]
    PendingOps,
    #[error("stream is still attached to {0} communicator(s)")]
    InUse(usize),
    #[error("invalid or freed stream handle")]
    InvalidStream,
    #[error("invalid or freed communicator")]
    InvalidComm,
    #[error("bad info hint: {0}")]
    BadHint(String),
    #[error("info key `{0}` not found")]
    NotFound(String),
    #[error("info value for `{0}` is not valid hex")]
    BadEncoding(String),
    #[error("rank {0} is out of range")]
    InvalidRank(i32),
    #[error("negative element count {0}")]
    InvalidCount(i64),
    #[error("tag {0} is reserved or negative")]
    InvalidTag(i32),
    #[error("stream index {0} is out of range")]
    InvalidIndex(i32),
    #[error("receive must name a concrete local stream index")]
    WildcardDst,
    #[error("multiplex communicators require the indexed send/recv calls")]
    MultiplexComm,
    #[error("indexed send/recv requires a multiplex communicator")]
    NotMultiplex,
    #[error("stream list is empty")]
    EmptyList,
    #[error("request was already consumed")]
    InvalidRequest,
    #[error("communicator has no queue-backed local stream")]
    NotEnqueueComm,
    #[error("requests were not issued on the same local stream")]
    StreamMismatch,
    #[error("execution queue still has pending items")]
    QueueBusy,
    #[error("a task on the execution queue panicked")]
    TaskPanicked,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
