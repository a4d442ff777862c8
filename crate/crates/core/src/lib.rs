//! An in-process message-passing runtime with explicit stream contexts.
//!
//! A [`Fabric`] hosts several logical processes. Each process owns a pool of
//! endpoints split into an implicit part, used by plain communicators through
//! a deterministic selection policy, and an explicit part handed out to
//! [`Stream`]s. A stream is a serial execution context: a thread's call
//! sequence, or an [`ExecQueue`] whose worker runs enqueued work in order.
//! Communicators can carry one stream ([`Communicator::stream_comm_create`])
//! or an indexed list ([`Communicator::stream_comm_create_multiple`]).

pub mod comm;
pub mod config;
pub mod datatype;
pub mod enqueue;
pub mod error;
pub mod fabric;
pub mod info;
mod p2p;
pub mod request;
pub mod stream;

pub use comm::{CommKind, Communicator, Target};
pub use config::{ExclusionMode, FabricConfig, ImplicitPolicy};
pub use datatype::Elem;
pub use enqueue::{wait_enqueue, waitall_enqueue, DeviceBuffer, ExecQueue, ItemKind, Location};
pub use error::{Error, Result};
pub use fabric::wire::NO_INDEX;
pub use fabric::{AcquireMode, Fabric, Process, Role, ANY_INDEX, ANY_SOURCE, ANY_TAG};
pub use info::Info;
pub use request::{waitall, Request, RequestKind, Status};
pub use stream::{Stream, StreamKind, STREAM_NULL};
