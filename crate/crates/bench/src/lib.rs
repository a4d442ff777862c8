//! Message-rate benchmark and matching-order oracle for `streamix`.
//!
//! [`run_msgrate`] reproduces the multithreaded pairwise message-rate
//! experiment on two logical processes; [`run_interleaving_oracle`]
//! exhaustively replays small send/receive programs against a reference
//! matcher.

mod msgrate;
mod oracle;

pub use msgrate::{run_msgrate, BenchConfig, BenchMode, BenchResult, CSV_HEADER};
pub use oracle::{run_interleaving_oracle, Divergence, OracleReport, MAX_ORACLE_OPS};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Fabric(#[from] streamix::Error),
}
