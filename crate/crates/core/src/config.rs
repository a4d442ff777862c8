//! Fabric configuration: pool sizes, exclusion regime and the implicit
//! endpoint-selection policy.
//!
//! Pool sizes and the exclusion regime may come from the environment
//! (`STREAMIX_IMPLICIT_VCIS`, `STREAMIX_EXPLICIT_VCIS`, `STREAMIX_EXCLUSION`).
//! Values set on the config itself always take precedence.

use std::str::FromStr;

use crate::error::{Error, Result};

pub const ENV_IMPLICIT_VCIS: &str = "STREAMIX_IMPLICIT_VCIS";
pub const ENV_EXPLICIT_VCIS: &str = "STREAMIX_EXPLICIT_VCIS";
pub const ENV_EXCLUSION: &str = "STREAMIX_EXCLUSION";

/// Upper bound on implicit + explicit endpoints per process.
pub const DEFAULT_MAX_POOL_SIZE: usize = 64;

/// How entry into an endpoint's matching engine is serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExclusionMode {
    /// One critical section per process guards every endpoint.
    Global,
    /// Each endpoint has its own critical section. Exclusively owned stream
    /// endpoints skip it and rely on the stream's serial context.
    PerEndpoint,
}

impl FromStr for ExclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(Self::Global),
            "per_endpoint" | "per-endpoint" | "pervci" | "per_vci" => Ok(Self::PerEndpoint),
            other => Err(Error::ConfigInvalid(format!(
                "unknown exclusion mode `{other}`"
            ))),
        }
    }
}

/// The regime actually applied to one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exclusion {
    Global,
    PerEndpoint,
    /// No synchronization: the owning stream's serial context is the guard.
    None,
}

/// Implicit endpoint selection for traffic without an explicit stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ImplicitPolicy {
    /// Sender and receiver both hash the context id onto the implicit pool.
    #[default]
    OneToOne,
    /// Senders rotate through the implicit pool, receivers use endpoint 0.
    SenderAnyRecvDefault,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FabricConfig {
    implicit_pool_size: Option<usize>,
    explicit_pool_size: Option<usize>,
    exclusion: Option<ExclusionMode>,
    implicit_policy: ImplicitPolicy,
    max_pool_size: usize,
    verify_serial: bool,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            implicit_pool_size: None,
            explicit_pool_size: None,
            exclusion: None,
            implicit_policy: ImplicitPolicy::default(),
            max_pool_size: DEFAULT_MAX_POOL_SIZE,
            verify_serial: true,
        }
    }
}

impl FabricConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn implicit_pool_size(mut self, n: usize) -> Self {
        self.implicit_pool_size = Some(n);
        self
    }

    pub fn explicit_pool_size(mut self, n: usize) -> Self {
        self.explicit_pool_size = Some(n);
        self
    }

    pub fn exclusion(mut self, mode: ExclusionMode) -> Self {
        self.exclusion = Some(mode);
        self
    }

    pub fn implicit_policy(mut self, policy: ImplicitPolicy) -> Self {
        self.implicit_policy = policy;
        self
    }

    pub fn max_pool_size(mut self, n: usize) -> Self {
        self.max_pool_size = n;
        self
    }

    /// Turns off the runtime check that an exclusively owned stream endpoint
    /// is only entered by one agent at a time.
    ///
    /// # Safety
    ///
    /// The caller promises that every stream bound to an exclusive endpoint is
    /// driven by at most one thread at any instant, including the requests it
    /// issued. Breaking that promise is a data race on the endpoint queues.
    pub unsafe fn assume_serial_contexts(mut self) -> Self {
        self.verify_serial = false;
        self
    }

    /// Resolves unset fields from the environment, then from defaults, and
    /// validates the result.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let implicit = match self.implicit_pool_size {
            Some(n) => n,
            None => env_usize(ENV_IMPLICIT_VCIS)?.unwrap_or(1),
        };
        let explicit = match self.explicit_pool_size {
            Some(n) => n,
            None => env_usize(ENV_EXPLICIT_VCIS)?.unwrap_or(0),
        };
        let exclusion = match self.exclusion {
            Some(m) => m,
            None => match std::env::var(ENV_EXCLUSION) {
                Ok(v) => v.parse()?,
                Err(_) => ExclusionMode::PerEndpoint,
            },
        };
        if implicit == 0 {
            return Err(Error::ConfigInvalid(
                "implicit pool needs at least one endpoint".into(),
            ));
        }
        if implicit + explicit > self.max_pool_size {
            return Err(Error::ConfigInvalid(format!(
                "pool size {} exceeds maximum {}",
                implicit + explicit,
                self.max_pool_size
            )));
        }
        Ok(ResolvedConfig {
            implicit_pool_size: implicit,
            explicit_pool_size: explicit,
            exclusion,
            implicit_policy: self.implicit_policy,
            verify_serial: self.verify_serial,
        })
    }
}

fn env_usize(key: &str) -> Result<Option<usize>> {
    match std::env::var(key) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::ConfigInvalid(format!("{key}={v} is not a count"))),
        Err(_) => Ok(None),
    }
}

/// Validated configuration in effect for a fabric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedConfig {
    pub implicit_pool_size: usize,
    pub explicit_pool_size: usize,
    pub exclusion: ExclusionMode,
    pub implicit_policy: ImplicitPolicy,
    pub(crate) verify_serial: bool,
}

impl ResolvedConfig {
    pub fn total_pool_size(&self) -> usize {
        self.implicit_pool_size + self.explicit_pool_size
    }
}
