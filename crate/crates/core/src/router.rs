//! Delivery of notifications and alarms through pluggable transports, with
//! at-least-once semantics and dedupe.
//!
//! SMS offers no transactional delivery, so the router retries transient
//! failures and guarantees at most one *observable* effect per dedupe key
//! instead of exactly-once sends. For the shipped file-outbox stubs the
//! outbox line is that observable effect, and doubles as the durable dedupe
//! record: on startup the router re-seeds its sent-set by scanning the
//! outboxes, so a crash between the write-ahead log and delivery still ends
//! with exactly one line after the alarm is re-routed.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;
use thiserror::Error;

use crate::codec::{parse, Message};
use crate::model::{Address, AddressKind, Alarm, DayBin, SocketId, Timestamp};

#[derive(Debug, Error)]
pub enum RouterError {
    /// The routing table cannot resolve the destination to a transport.
    #[error("no transport for destination `{0}`")]
    NoTransport(Address),
    /// A transport with this name is already registered.
    #[error("transport `{0}` already registered")]
    DuplicateTransport(String),
    /// Outbox file problem.
    #[error("transport io: {0}")]
    Io(#[from] std::io::Error),
}

/// What a single send attempt came back with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    Success,
    /// Worth retrying (congestion, timeout).
    TransientFailure(String),
    /// Retrying cannot help (unroutable number, rejected payload).
    PermanentFailure(String),
}

/// A delivery channel. Sends must be safe to retry; idempotence is the
/// router's job via dedupe, not the transport's.
pub trait Transport: Send {
    fn name(&self) -> &str;
    fn send(&mut self, destination: &Address, body: &str, now: Timestamp) -> SendOutcome;
    /// Dedupe keys already observable in this transport's durable record,
    /// consulted once at registration time. Defaults to none.
    fn delivered_keys(&self) -> Vec<String> {
        Vec::new()
    }
}

/// What is being delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryKind {
    Notification,
    Alarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    Pending,
    Sent,
    Failed,
}

/// One message on its way out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub kind: DeliveryKind,
    pub dedupe_key: String,
    pub destination: Address,
    pub body: String,
    pub attempts: u32,
    pub status: DeliveryStatus,
}

impl Delivery {
    pub fn notification(socket: &SocketId, event_at: Timestamp, destination: Address, body: impl Into<String>) -> Self {
        Delivery {
            kind: DeliveryKind::Notification,
            dedupe_key: format!("{socket}/{event_at}"),
            destination,
            body: body.into(),
            attempts: 0,
            status: DeliveryStatus::Pending,
        }
    }

    pub fn alarm(alarm: &Alarm, destination: Address) -> Self {
        Delivery {
            kind: DeliveryKind::Alarm,
            dedupe_key: alarm.dedupe_key(),
            destination,
            body: alarm_body(&alarm.socket, alarm.date, alarm.bin),
            attempts: 0,
            status: DeliveryStatus::Pending,
        }
    }
}

/// Canonical alarm message text.
pub fn alarm_body(socket: &SocketId, date: NaiveDate, bin: DayBin) -> String {
    format!("ALARM {socket} {} bin={} no activity in usual time", date.format("%Y-%m-%d"), bin)
}

/// Recover a dedupe key from a delivered body, for outbox-based seeding.
/// Unknown shapes yield `None` and are ignored.
pub fn dedupe_key_of_body(body: &str) -> Option<String> {
    if let Some(rest) = body.strip_prefix("ALARM ") {
        let mut it = rest.split(' ');
        let socket = it.next()?;
        let date = it.next()?;
        let bin = it.next()?.strip_prefix("bin=")?;
        return Some(format!("{socket}/{date}/{bin}"));
    }
    if let Ok(Message::Notification { socket, at_override: Some(at) }) = parse(body) {
        return Some(format!("{socket}/{at}"));
    }
    None
}

/// Retry policy.
#[derive(Debug, Clone, Copy)]
pub struct RouterParams {
    pub max_attempts: u32,
    /// Fixed backoff between attempts, in logical seconds; recorded, not
    /// slept, so simulations never stall.
    pub backoff_seconds: u64,
}

impl Default for RouterParams {
    fn default() -> Self {
        RouterParams { max_attempts: 3, backoff_seconds: 1 }
    }
}

#[derive(Default)]
struct RouterInner {
    transports: HashMap<String, Box<dyn Transport>>,
    sent: HashSet<String>,
}

/// The router proper. A single coarse lock makes `route` linearizable, which
/// is all the dedupe guarantee needs; per-destination order follows call
/// order.
pub struct Router {
    params: RouterParams,
    /// Scheme (or `phone`) → transport name overrides from configuration.
    table: HashMap<String, String>,
    inner: Mutex<RouterInner>,
}

impl Router {
    pub fn new(params: RouterParams, table: HashMap<String, String>) -> Self {
        Router { params, table, inner: Mutex::new(RouterInner::default()) }
    }

    /// Register a transport and absorb its already-delivered keys.
    pub fn register_transport(&self, transport: Box<dyn Transport>) -> Result<(), RouterError> {
        let mut inner = self.inner.lock().expect("router lock");
        let name = transport.name().to_string();
        if inner.transports.contains_key(&name) {
            return Err(RouterError::DuplicateTransport(name));
        }
        inner.sent.extend(transport.delivered_keys());
        inner.transports.insert(name, transport);
        Ok(())
    }

    /// Transport name a destination resolves to: phone-form addresses
    /// default to `sms`, URI-form addresses route by scheme, both
    /// overridable by the routing table.
    fn resolve(&self, destination: &Address) -> String {
        match destination.kind() {
            AddressKind::Phone => {
                self.table.get("phone").cloned().unwrap_or_else(|| "sms".to_string())
            }
            AddressKind::Uri => {
                let scheme = destination.scheme().unwrap_or_default();
                self.table.get(scheme).cloned().unwrap_or_else(|| scheme.to_string())
            }
        }
    }

    /// Whether this dedupe key already took effect somewhere.
    pub fn already_sent(&self, key: &str) -> bool {
        self.inner.lock().expect("router lock").sent.contains(key)
    }

    /// Deliver, with retry on transient failure and dedupe on the key. A key
    /// that already went out is a no-op returning the sent record. `now` is
    /// logical time, stamped onto the transport's durable record.
    pub fn route(&self, mut delivery: Delivery, now: Timestamp) -> Result<Delivery, RouterError> {
        let name = self.resolve(&delivery.destination);
        let mut inner = self.inner.lock().expect("router lock");
        if inner.sent.contains(&delivery.dedupe_key) {
            delivery.status = DeliveryStatus::Sent;
            return Ok(delivery);
        }
        if !inner.transports.contains_key(&name) {
            return Err(RouterError::NoTransport(delivery.destination));
        }
        while delivery.attempts < self.params.max_attempts {
            delivery.attempts += 1;
            let transport = inner.transports.get_mut(&name).expect("checked above");
            match transport.send(&delivery.destination, &delivery.body, now) {
                SendOutcome::Success => {
                    delivery.status = DeliveryStatus::Sent;
                    inner.sent.insert(delivery.dedupe_key.clone());
                    return Ok(delivery);
                }
                SendOutcome::TransientFailure(_) => continue, // fixed logical backoff
                SendOutcome::PermanentFailure(_) => break,
            }
        }
        delivery.status = DeliveryStatus::Failed;
        Ok(delivery)
    }
}

// ---------------------------------------------------------------------------
// Shipped stub transports
// ---------------------------------------------------------------------------

/// Appends `<iso8601>\t<destination>\t<body>` lines to a file. Stands in for
/// the real SMS modem, push service or webhook endpoint so runs stay
/// hermetic while preserving the plugin seam.
pub struct FileOutboxTransport {
    name: String,
    path: PathBuf,
}

impl FileOutboxTransport {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        FileOutboxTransport { name: name.into(), path: path.into() }
    }

    /// Conventional outbox path for a transport name inside a directory.
    pub fn outbox_path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.outbox"))
    }
}

impl Transport for FileOutboxTransport {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, destination: &Address, body: &str, now: Timestamp) -> SendOutcome {
        let line = format!("{now}\t{destination}\t{body}\n");
        let result = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()).and_then(|_| f.flush()));
        match result {
            Ok(()) => SendOutcome::Success,
            Err(e) => SendOutcome::TransientFailure(e.to_string()),
        }
    }

    fn delivered_keys(&self) -> Vec<String> {
        let Ok(contents) = std::fs::read_to_string(&self.path) else {
            return Vec::new();
        };
        contents
            .lines()
            .filter_map(|line| line.splitn(3, '\t').nth(2))
            .filter_map(dedupe_key_of_body)
            .collect()
    }
}

/// Test transport following a script of outcomes, then succeeding.
pub struct ScriptedTransport {
    name: String,
    script: Mutex<Vec<SendOutcome>>,
    pub sent: Mutex<Vec<(Address, String)>>,
}

impl ScriptedTransport {
    pub fn new(name: impl Into<String>, script: Vec<SendOutcome>) -> Self {
        ScriptedTransport { name: name.into(), script: Mutex::new(script), sent: Mutex::new(Vec::new()) }
    }
}

impl Transport for ScriptedTransport {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, destination: &Address, body: &str, _now: Timestamp) -> SendOutcome {
        let mut script = self.script.lock().expect("script lock");
        let outcome = if script.is_empty() { SendOutcome::Success } else { script.remove(0) };
        if outcome == SendOutcome::Success {
            self.sent.lock().expect("sent lock").push((destination.clone(), body.to_string()));
        }
        outcome
    }
}
