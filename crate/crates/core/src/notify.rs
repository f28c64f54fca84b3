//! Outbound delivery: the gateway stub, retry with backoff and a small
//! worker pool draining the queued notification log.
//!
//! Delivery is at least once. A crash between the gateway accepting a message
//! and the log row being marked sent replays that message on restart, so
//! recipients may see duplicates.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::Utc;
use crossbeam_channel::{unbounded, Sender};
use parking_lot::{Condvar, Mutex};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;
use tracing::{info, warn};

use crate::ids::NotificationId;
use crate::registry::{DeliveryStatus, NotificationLog, Registry, RegistryError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
}

pub trait Gateway: Send + Sync {
    fn send(&self, n: &NotificationLog) -> Result<(), GatewayError>;
}

/// Failure injection shared by the stub gateways.
struct Faults {
    rate: f64,
    rng: Mutex<StdRng>,
}

impl Faults {
    fn new(rate: f64, seed: u64) -> Self {
        Faults {
            rate: rate.clamp(0.0, 1.0),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        }
    }

    fn trip(&self) -> bool {
        self.rate > 0.0 && self.rng.lock().gen_bool(self.rate)
    }
}

/// Appends one line per delivered message to a file:
/// `ISO8601<TAB>recipient<TAB>payload`. Tabs and newlines inside the payload
/// are written as spaces.
pub struct FileSinkGateway {
    path: PathBuf,
    file: Mutex<File>,
    faults: Faults,
    delay: Duration,
}

impl FileSinkGateway {
    pub fn open(path: impl AsRef<Path>, failure_rate: f64, seed: u64, delay: Duration) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(FileSinkGateway {
            path,
            file: Mutex::new(file),
            faults: Faults::new(failure_rate, seed),
            delay,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn flatten(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl Gateway for FileSinkGateway {
    fn send(&self, n: &NotificationLog) -> Result<(), GatewayError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        if self.faults.trip() {
            return Err(GatewayError::Unreachable("injected failure".into()));
        }
        let line = format!(
            "{}\t{}\t{}\n",
            crate::protocol::format_timestamp(Utc::now()),
            flatten(&n.recipient_phone),
            flatten(&n.payload)
        );
        let mut f = self.file.lock();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| GatewayError::Unreachable(e.to_string()))
    }
}

/// Keeps delivered messages in memory.
pub struct MemoryGateway {
    sent: Mutex<Vec<NotificationLog>>,
    calls: Mutex<u64>,
    faults: Faults,
}

impl MemoryGateway {
    pub fn new(failure_rate: f64, seed: u64) -> Self {
        MemoryGateway {
            sent: Mutex::new(Vec::new()),
            calls: Mutex::new(0),
            faults: Faults::new(failure_rate, seed),
        }
    }

    pub fn sent(&self) -> Vec<NotificationLog> {
        self.sent.lock().clone()
    }

    /// Every send attempt, failed ones included.
    pub fn calls(&self) -> u64 {
        *self.calls.lock()
    }
}

impl Gateway for MemoryGateway {
    fn send(&self, n: &NotificationLog) -> Result<(), GatewayError> {
        *self.calls.lock() += 1;
        if self.faults.trip() {
            return Err(GatewayError::Unreachable("injected failure".into()));
        }
        self.sent.lock().push(n.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (1-based): base * 2^(retry-1), capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub struct Deliverer {
    registry: Arc<Registry>,
    gateway: Arc<dyn Gateway>,
    policy: RetryPolicy,
}

impl Deliverer {
    pub fn new(registry: Arc<Registry>, gateway: Arc<dyn Gateway>, policy: RetryPolicy) -> Self {
        Deliverer {
            registry,
            gateway,
            policy,
        }
    }

    /// Pushes one queued notification to the gateway, retrying with backoff,
    /// and records the terminal status. Rows that are already terminal are
    /// left alone.
    pub fn deliver(&self, id: &NotificationId) -> Result<DeliveryStatus, RegistryError> {
        let row = self
            .registry
            .notification(id)
            .ok_or_else(|| RegistryError::NotFound(format!("notification {id}")))?;
        if row.status != DeliveryStatus::Queued {
            return Ok(row.status);
        }
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.gateway.send(&row) {
                Ok(()) => {
                    self.registry.mark_sent(id, attempts)?;
                    info!(event = "notification_sent", notification_id = %id, attempts);
                    return Ok(DeliveryStatus::Sent);
                }
                Err(e) if attempts <= self.policy.max_retries => {
                    warn!(event = "notification_retry", notification_id = %id, attempts, error = %e);
                    std::thread::sleep(self.policy.backoff(attempts));
                }
                Err(e) => {
                    self.registry.mark_failed(id, attempts)?;
                    warn!(event = "notification_failed", notification_id = %id, attempts, error = %e);
                    return Ok(DeliveryStatus::Failed);
                }
            }
        }
    }
}

#[derive(Default)]
struct PoolState {
    /// Submitted and not yet finished.
    pending: HashSet<NotificationId>,
}

/// Worker threads draining submitted notification ids. An id submitted
/// while it is still pending is ignored, so recovery and live traffic can
/// overlap without double sends.
pub struct DeliveryPool {
    tx: Option<Sender<NotificationId>>,
    workers: Vec<JoinHandle<()>>,
    state: Arc<(Mutex<PoolState>, Condvar)>,
    registry: Arc<Registry>,
}

impl DeliveryPool {
    pub fn start(deliverer: Arc<Deliverer>, workers: usize) -> Self {
        let (tx, rx) = unbounded::<NotificationId>();
        let state: Arc<(Mutex<PoolState>, Condvar)> = Arc::default();
        let handles = (0..workers.max(1))
            .map(|i| {
                let rx = rx.clone();
                let deliverer = deliverer.clone();
                let state = state.clone();
                std::thread::Builder::new()
                    .name(format!("delivery-{i}"))
                    .spawn(move || {
                        for id in rx {
                            if let Err(e) = deliverer.deliver(&id) {
                                warn!(event = "delivery_error", notification_id = %id, error = %e);
                            }
                            let (lock, cv) = &*state;
                            lock.lock().pending.remove(&id);
                            cv.notify_all();
                        }
                    })
                    .expect("spawn delivery worker")
            })
            .collect();
        DeliveryPool {
            tx: Some(tx),
            workers: handles,
            state,
            registry: deliverer.registry.clone(),
        }
    }

    pub fn submit(&self, id: NotificationId) {
        let (lock, _) = &*self.state;
        if lock.lock().pending.insert(id.clone()) {
            if let Some(tx) = &self.tx {
                let _ = tx.send(id);
            }
        }
    }

    pub fn submit_all(&self, ids: impl IntoIterator<Item = NotificationId>) {
        for id in ids {
            self.submit(id);
        }
    }

    /// Re-drives everything still queued in the log. Returns how many rows
    /// were submitted.
    pub fn submit_queued(&self) -> usize {
        let ids = self.registry.queued_notifications();
        let n = ids.len();
        self.submit_all(ids);
        n
    }

    pub fn pending(&self) -> usize {
        self.state.0.lock().pending.len()
    }

    /// Blocks until nothing is pending or `timeout` elapses. Returns whether
    /// the pool went idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        let (lock, cv) = &*self.state;
        let mut st = lock.lock();
        while !st.pending.is_empty() {
            if cv.wait_until(&mut st, deadline).timed_out() {
                return st.pending.is_empty();
            }
        }
        true
    }

    /// Stops accepting work and joins the workers after the queue drains.
    pub fn shutdown(mut self) {
        self.tx.take();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for DeliveryPool {
    fn drop(&mut self) {
        self.tx.take();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}
