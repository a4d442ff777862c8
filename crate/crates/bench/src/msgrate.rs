use std::sync::Barrier;
use std::time::Instant;

use streamix::config::{ENV_EXPLICIT_VCIS, ENV_IMPLICIT_VCIS};
use streamix::{waitall, Communicator, ExclusionMode, Fabric, FabricConfig, Info, Stream};

use crate::BenchError;

pub const CSV_HEADER: [&str; 6] = [
    "mode",
    "threads",
    "msg_bytes",
    "iters",
    "elapsed_s",
    "msgs_per_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    /// Legacy communicators behind one process-wide critical section.
    Global,
    /// Legacy communicators hashed one-to-one onto implicit endpoints,
    /// each with its own critical section.
    PerVci,
    /// Stream communicators on exclusive explicit endpoints, no locking.
    Stream,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Global, BenchMode::PerVci, BenchMode::Stream];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Global => "global",
            BenchMode::PerVci => "pervci",
            BenchMode::Stream => "stream",
        }
    }
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BenchMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "global" | "global_lock" => Ok(BenchMode::Global),
            "pervci" | "per_vci_implicit" => Ok(BenchMode::PerVci),
            "stream" | "stream_explicit" => Ok(BenchMode::Stream),
            other => Err(BenchError::ConfigInvalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub threads: usize,
    pub msg_bytes: usize,
    /// Timed messages per thread.
    pub iters: usize,
    /// Receives posted (and sends issued) per batch before waiting.
    pub window: usize,
    /// Untimed messages per thread sent before measuring.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mode: BenchMode::Stream,
            threads: 1,
            msg_bytes: 8,
            iters: 10_000,
            window: 64,
            warmup: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub mode: BenchMode,
    pub threads: usize,
    pub msg_bytes: usize,
    pub iters: usize,
    /// Timed messages each receiving thread completed.
    pub per_thread: Vec<u64>,
    pub elapsed_s: f64,
    pub msgs_per_s: f64,
}

impl BenchResult {
    pub fn total_messages(&self) -> u64 {
        self.per_thread.iter().sum()
    }

    pub fn csv_record(&self) -> [String; 6] {
        [
            self.mode.name().to_string(),
            self.threads.to_string(),
            self.msg_bytes.to_string(),
            self.iters.to_string(),
            format!("{:.6}", self.elapsed_s),
            format!("{:.1}", self.msgs_per_s),
        ]
    }
}

fn env_is_set(key: &str) -> bool {
    std::env::var_os(key).is_some()
}

/// Pool sizes come from the environment when set there, otherwise they are
/// sized to the thread count. The exclusion regime is dictated by the mode.
fn fabric_config(cfg: &BenchConfig) -> FabricConfig {
    let t = cfg.threads;
    let mut fc = FabricConfig::new();
    match cfg.mode {
        BenchMode::Global | BenchMode::PerVci => {
            if !env_is_set(ENV_IMPLICIT_VCIS) {
                fc = fc.implicit_pool_size(t);
            }
            if !env_is_set(ENV_EXPLICIT_VCIS) {
                fc = fc.explicit_pool_size(0);
            }
        }
        BenchMode::Stream => {
            if !env_is_set(ENV_EXPLICIT_VCIS) {
                fc = fc.explicit_pool_size(t);
            }
        }
    }
    fc = fc.exclusion(match cfg.mode {
        BenchMode::Global => ExclusionMode::Global,
        _ => ExclusionMode::PerEndpoint,
    });
    if cfg.mode == BenchMode::Stream {
        // SAFETY: every driver thread below owns its stream and communicator
        // and is the only thread that touches them.
        fc = unsafe { fc.assume_serial_contexts() };
    }
    fc
}

fn validate(cfg: &BenchConfig) -> Result<(), BenchError> {
    if cfg.threads == 0 {
        return Err(BenchError::ConfigInvalid(
            "threads must be at least 1".into(),
        ));
    }
    if cfg.window == 0 {
        return Err(BenchError::ConfigInvalid(
            "window must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Builds one communicator per thread on every process.
fn communicators(fabric: &Fabric, cfg: &BenchConfig) -> Result<Vec<Vec<Communicator>>, BenchError> {
    let resolved = fabric.config();
    let capacity = match cfg.mode {
        BenchMode::Global | BenchMode::PerVci => resolved.implicit_pool_size,
        BenchMode::Stream => resolved.explicit_pool_size,
    };
    if cfg.threads > capacity {
        return Err(BenchError::ConfigInvalid(format!(
            "{} threads need {} endpoints but the {} pool has {capacity}",
            cfg.threads,
            cfg.threads,
            if cfg.mode == BenchMode::Stream {
                "explicit"
            } else {
                "implicit"
            },
        )));
    }
    let per_proc = fabric.run(|p| -> Result<Vec<Communicator>, BenchError> {
        let world = p.world();
        (0..cfg.threads)
            .map(|_| match cfg.mode {
                BenchMode::Global | BenchMode::PerVci => Ok(world.dup()?),
                BenchMode::Stream => {
                    let s = Stream::create(&p, &Info::new())?;
                    Ok(world.stream_comm_create(&s)?)
                }
            })
            .collect()
    });
    per_proc.into_iter().collect()
}

const ACK_TAG: i32 = 1;
const DATA_TAG: i32 = 0;

/// Sends `count` messages in windows, waiting for one acknowledgement per
/// window so the receiver always has its receives posted ahead.
fn drive_sender(
    comm: &Communicator,
    payload: &[u8],
    count: usize,
    window: usize,
) -> Result<(), BenchError> {
    let mut done = 0;
    let mut reqs = Vec::with_capacity(window);
    while done < count {
        let batch = window.min(count - done);
        let mut ack = comm.irecv::<u8>(0, 1, ACK_TAG)?;
        reqs.clear();
        for _ in 0..batch {
            reqs.push(comm.isend(payload, 1, DATA_TAG)?);
        }
        waitall(&mut reqs)?;
        ack.wait()?;
        done += batch;
    }
    Ok(())
}

fn drive_receiver(
    comm: &Communicator,
    msg_bytes: usize,
    count: usize,
    window: usize,
) -> Result<u64, BenchError> {
    let mut done = 0;
    let mut completed = 0u64;
    let mut reqs = Vec::with_capacity(window);
    while done < count {
        let batch = window.min(count - done);
        reqs.clear();
        for _ in 0..batch {
            reqs.push(comm.irecv::<u8>(msg_bytes, 0, DATA_TAG)?);
        }
        comm.send::<u8>(&[], 0, ACK_TAG)?;
        completed += waitall(&mut reqs)?
            .iter()
            .filter(|s| s.len == msg_bytes)
            .count() as u64;
        done += batch;
    }
    Ok(completed)
}

/// Runs the pairwise message-rate experiment: thread `i` of process 0
/// streams messages to thread `i` of process 1 over its own communicator.
pub fn run_msgrate(cfg: &BenchConfig) -> Result<BenchResult, BenchError> {
    validate(cfg)?;
    let fabric = Fabric::new(2, fabric_config(cfg)).map_err(|e| match e {
        streamix::Error::ConfigInvalid(m) => BenchError::ConfigInvalid(m),
        other => other.into(),
    })?;
    let comms = communicators(&fabric, cfg)?;
    let payload = vec![0xa5u8; cfg.msg_bytes];
    let start_line = Barrier::new(2 * cfg.threads + 1);
    let warm_line = Barrier::new(2 * cfg.threads);

    let (elapsed, per_thread) = std::thread::scope(|s| -> Result<(f64, Vec<u64>), BenchError> {
        let senders: Vec<_> = comms[0]
            .iter()
            .map(|c| {
                let (payload, start_line, warm_line) = (&payload, &start_line, &warm_line);
                s.spawn(move || -> Result<(), BenchError> {
                    drive_sender(c, payload, cfg.warmup, cfg.window)?;
                    warm_line.wait();
                    start_line.wait();
                    drive_sender(c, payload, cfg.iters, cfg.window)
                })
            })
            .collect();
        let receivers: Vec<_> = comms[1]
            .iter()
            .map(|c| {
                let (start_line, warm_line) = (&start_line, &warm_line);
                s.spawn(move || -> Result<u64, BenchError> {
                    drive_receiver(c, cfg.msg_bytes, cfg.warmup, cfg.window)?;
                    warm_line.wait();
                    start_line.wait();
                    drive_receiver(c, cfg.msg_bytes, cfg.iters, cfg.window)
                })
            })
            .collect();
        start_line.wait();
        let t0 = Instant::now();
        let counts: Vec<u64> = receivers
            .into_iter()
            .map(|h| h.join().expect("receiver thread panicked"))
            .collect::<Result<_, _>>()?;
        for h in senders {
            h.join().expect("sender thread panicked")?;
        }
        Ok((t0.elapsed().as_secs_f64(), counts))
    })?;

    let elapsed = elapsed.max(f64::MIN_POSITIVE);
    let total: u64 = per_thread.iter().sum();
    Ok(BenchResult {
        mode: cfg.mode,
        threads: cfg.threads,
        msg_bytes: cfg.msg_bytes,
        iters: cfg.iters,
        per_thread,
        elapsed_s: elapsed,
        msgs_per_s: total as f64 / elapsed,
    })
}
