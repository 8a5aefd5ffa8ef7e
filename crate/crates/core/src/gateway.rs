//! The long-running ingestion service: accepts envelope frames, logs them
//! write-ahead, feeds the pattern engine, schedules bin closes on logical or
//! wall-clock time, and hands alarms to the router.
//!
//! Ordering discipline, which the crash tests lean on:
//!
//! * append strictly before engine mutation (the log is a write-ahead
//!   record);
//! * at equal timestamps, due bin closes run before an envelope is ingested,
//!   so a bin is closed before any event nominally after its grace window
//!   could be misattributed;
//! * alarms are logged before they are routed, and the outbox itself is the
//!   dedupe record, so a restart re-routes logged alarms at most once.
//!
//! On startup the existing log is replayed to rebuild engine state; logged
//! alarms are applied as resets and re-routed only if their key is not
//! already observable in an outbox.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as _};
use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::codec::{parse, Envelope, Message};
use crate::config::ServiceConfig;
use crate::model::{
    bins_per_day, parse_date, Alarm, DayBin, EventSource, SocketId, SwitchOnEvent, Timestamp,
};
use crate::pattern::PatternEngine;
use crate::router::{Delivery, FileOutboxTransport, Router, RouterError, RouterParams};
use crate::store::{replay, EventLog, LogRecord, RecordKind, StoreError};

/// Transports every deployment ships with.
pub const STUB_TRANSPORTS: [&str; 3] = ["sms", "push", "webhook"];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error("dead letter io: {0}")]
    DeadLetterIo(std::io::Error),
    #[error("log replay: {0}")]
    Rebuild(String),
    /// Crash harness stop: the configured operation budget ran out.
    #[error("operation budget exhausted")]
    Killed,
}

/// Running totals, exposed for summaries and tests.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counters {
    pub events: u64,
    pub alarms: u64,
    pub dead_letters: u64,
    pub config_records: u64,
    /// Alarms logged but with no resolvable recipient or transport.
    pub undeliverable_alarms: u64,
}

/// What ingesting one envelope did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    EventIngested,
    ConfigRecorded,
    DeadLettered,
}

// ---------------------------------------------------------------------------
// Close scheduler
// ---------------------------------------------------------------------------

/// One (socket, bin, date) whose observation window is over.
#[derive(Debug, Clone, PartialEq, Eq)]
struct DueClose {
    due: Timestamp,
    socket: SocketId,
    date: NaiveDate,
    bin_index: u32,
}

/// Per-socket cursor over the (date, bin) grid in due order
/// (`due = bin end + grace`). A socket enters the schedule at its first
/// event; everything due before that predates the socket and is skipped.
#[derive(Debug, Clone)]
struct BinScheduler {
    bin_size_minutes: u32,
    grace_minutes: u32,
    cursors: HashMap<SocketId, (NaiveDate, u32)>,
}

impl BinScheduler {
    fn new(bin_size_minutes: u32, grace_minutes: u32) -> Self {
        BinScheduler { bin_size_minutes, grace_minutes, cursors: HashMap::new() }
    }

    /// Register a socket when first seen; its cursor starts at the first
    /// (date, bin) due strictly after `first_seen`.
    fn ensure_socket(&mut self, socket: &SocketId, first_seen: Timestamp) {
        if self.cursors.contains_key(socket) {
            return;
        }
        let (bin_size, grace) = (self.bin_size_minutes, self.grace_minutes);
        let mut cursor = (first_seen.date(), 0u32);
        while due_at(cursor, bin_size, grace) <= first_seen {
            cursor = advance(cursor, bin_size);
        }
        self.cursors.insert(socket.clone(), cursor);
    }

    /// Pop every close due at or before `now`, ordered by (due, socket, bin).
    fn collect_due(&mut self, now: Timestamp) -> Vec<DueClose> {
        let (bin_size, grace) = (self.bin_size_minutes, self.grace_minutes);
        let mut due = Vec::new();
        for (socket, cursor) in self.cursors.iter_mut() {
            loop {
                let t = due_at(*cursor, bin_size, grace);
                if t > now {
                    break;
                }
                due.push(DueClose { due: t, socket: socket.clone(), date: cursor.0, bin_index: cursor.1 });
                *cursor = advance(*cursor, bin_size);
            }
        }
        due.sort_by(|a, b| (a.due, &a.socket, a.bin_index).cmp(&(b.due, &b.socket, b.bin_index)));
        due
    }
}

fn due_at((date, bin_index): (NaiveDate, u32), bin_size_minutes: u32, grace_minutes: u32) -> Timestamp {
    DayBin::new(bin_index, bin_size_minutes)
        .expect("cursor bins are in range")
        .end(date, bin_size_minutes)
        .plus_minutes(grace_minutes as i64)
}

fn advance((date, bin_index): (NaiveDate, u32), bin_size_minutes: u32) -> (NaiveDate, u32) {
    let per_day = bins_per_day(bin_size_minutes).expect("validated bin size");
    if bin_index + 1 < per_day {
        (date, bin_index + 1)
    } else {
        (crate::model::next_day(date), 0)
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

pub struct Gateway {
    config: ServiceConfig,
    engine: PatternEngine,
    log: EventLog,
    router: Router,
    scheduler: BinScheduler,
    counters: Counters,
    last_tick: Option<Timestamp>,
    /// Remaining operation budget, for scripted crash tests. `None` in
    /// production.
    ops_limit: Option<u64>,
    ops_done: u64,
    /// Inputs whose durable commit completed; the resume point after a kill.
    committed_inputs: u64,
}

impl Gateway {
    /// Open (or re-open) the service over its on-disk state: recover the
    /// log tail, rebuild the engine by replay, seed router dedupe from the
    /// outboxes, and re-route logged alarms that never reached a transport.
    pub fn open(config: ServiceConfig) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(&config.outbox_dir).map_err(StoreError::Storage)?;

        let router = Router::new(RouterParams::default(), config.routes.clone());
        for name in STUB_TRANSPORTS {
            let path = FileOutboxTransport::outbox_path(&config.outbox_dir, name);
            router
                .register_transport(Box::new(FileOutboxTransport::new(name, path)))
                .expect("stub transport names are unique");
        }

        let log = EventLog::open(&config.log_path)?; // truncates a torn tail
        let replayed = replay(&config.log_path, None)?;

        let mut engine = PatternEngine::new(config.engine);
        let mut scheduler = BinScheduler::new(config.engine.bin_size_minutes, config.engine.grace_minutes);
        let mut counters = Counters::default();
        let mut logged_alarms: Vec<(Timestamp, SocketId, NaiveDate, DayBin)> = Vec::new();

        for record in &replayed.records {
            match record.kind {
                RecordKind::Event => {
                    scheduler.ensure_socket(&record.socket, record.at);
                    let event = SwitchOnEvent {
                        socket: record.socket.clone(),
                        at: record.at,
                        source: EventSource::Replayed,
                    };
                    engine
                        .ingest_event(&event)
                        .map_err(|e| GatewayError::Rebuild(e.to_string()))?;
                    counters.events += 1;
                }
                RecordKind::Config => {
                    if record.socket.as_str() != UNATTRIBUTED_SOCKET {
                        engine.touch_socket(&record.socket);
                    }
                    counters.config_records += 1;
                }
                RecordKind::Alarm => {
                    let (date, bin) = parse_alarm_payload(&record.payload, config.engine.bin_size_minutes)
                        .ok_or_else(|| {
                            GatewayError::Rebuild(format!("bad alarm payload `{}`", record.payload))
                        })?;
                    engine.apply_logged_alarm(&record.socket, bin, date);
                    counters.alarms += 1;
                    logged_alarms.push((record.at, record.socket.clone(), date, bin));
                }
            }
        }

        let mut gateway = Gateway {
            config,
            engine,
            log,
            router,
            scheduler,
            counters,
            last_tick: None,
            ops_limit: None,
            ops_done: 0,
            committed_inputs: 0,
        };

        // At-least-once: anything logged but absent from every outbox goes
        // out now, stamped with its original raise time.
        for (raised_at, socket, date, bin) in logged_alarms {
            let alarm = Alarm { socket, bin, date, raised_at };
            if !gateway.router.already_sent(&alarm.dedupe_key()) {
                gateway.route_alarm(&alarm)?;
            }
        }
        Ok(gateway)
    }

    /// Cap the number of operations this instance may perform before it
    /// reports [`GatewayError::Killed`]. Crash-test instrumentation.
    pub fn set_ops_limit(&mut self, limit: Option<u64>) {
        self.ops_limit = limit;
    }

    pub fn ops_done(&self) -> u64 {
        self.ops_done
    }

    pub fn committed_inputs(&self) -> u64 {
        self.committed_inputs
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn engine(&self) -> &PatternEngine {
        &self.engine
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn charge(&mut self) -> Result<(), GatewayError> {
        if let Some(limit) = self.ops_limit {
            if self.ops_done >= limit {
                return Err(GatewayError::Killed);
            }
        }
        self.ops_done += 1;
        Ok(())
    }

    /// Ingest one envelope: parse, write ahead, then mutate the engine.
    /// Bodies that do not parse and events that would violate per-socket
    /// order are dead-lettered, never a crash.
    pub fn ingest(&mut self, env: &Envelope) -> Result<IngestOutcome, GatewayError> {
        match parse(&env.body) {
            Err(e) => self.dead_letter(env, &e.to_string()),
            Ok(Message::Config { destination: _ }) => {
                // Middleware topology keeps the live config on the socket;
                // the server records config traffic for audit only.
                let socket = sender_socket(env).unwrap_or_else(unattributed_socket);
                let record = LogRecord::new(
                    env.received_at,
                    RecordKind::Config,
                    socket.clone(),
                    format!("{} {}", env.sender, env.body),
                );
                self.charge()?;
                self.log.append(&record)?;
                self.committed_inputs += 1;
                if socket.as_str() != UNATTRIBUTED_SOCKET {
                    self.engine.touch_socket(&socket);
                }
                self.counters.config_records += 1;
                Ok(IngestOutcome::ConfigRecorded)
            }
            Ok(Message::Notification { socket, at_override }) => {
                let at = at_override.unwrap_or(env.received_at);
                // Pre-check event order so the log keeps its per-socket
                // non-decreasing invariant; violations are dead-lettered.
                if let Some(hw) = self.engine.high_water(&socket) {
                    if hw.seconds_since(at) > self.config.engine.reorder_tolerance_seconds as i64 {
                        return self.dead_letter(env, &format!("out-of-order event at {at}"));
                    }
                }
                let record =
                    LogRecord::new(at, RecordKind::Event, socket.clone(), env.body.clone());
                self.charge()?;
                self.log.append(&record)?;
                self.committed_inputs += 1;
                self.scheduler.ensure_socket(&socket, at);
                let event = SwitchOnEvent { socket, at, source: EventSource::DeviceReported };
                self.charge()?;
                self.engine.ingest_event(&event).expect("order pre-checked against high water");
                self.counters.events += 1;
                Ok(IngestOutcome::EventIngested)
            }
        }
    }

    fn dead_letter(&mut self, env: &Envelope, error: &str) -> Result<IngestOutcome, GatewayError> {
        self.charge()?;
        self.append_dead_letter_line(&format!(
            "{}\t{}\t{}\t{}\n",
            env.received_at, env.sender, env.body, error
        ))?;
        self.committed_inputs += 1;
        self.counters.dead_letters += 1;
        Ok(IngestOutcome::DeadLettered)
    }

    /// Dead-letter a raw input line that never became an envelope.
    pub fn dead_letter_raw(&mut self, at: Timestamp, raw: &str, error: &str) -> Result<(), GatewayError> {
        self.charge()?;
        self.append_dead_letter_line(&format!("{at}\t-\t{raw}\t{error}\n"))?;
        self.committed_inputs += 1;
        self.counters.dead_letters += 1;
        Ok(())
    }

    fn append_dead_letter_line(&mut self, line: &str) -> Result<(), GatewayError> {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.config.dead_letter_path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(GatewayError::DeadLetterIo)
    }

    /// Advance logical time: close every (socket, bin, date) that came due,
    /// in chronological order, logging and routing any absence alarms.
    /// Closes already covered by a logged alarm are skipped, which makes
    /// re-ticking over the same span after a restart idempotent.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<Alarm>, GatewayError> {
        let now = self.last_tick.map_or(now, |t| t.max(now));
        self.last_tick = Some(now);
        let mut alarms = Vec::new();
        for item in self.scheduler.collect_due(now) {
            let bin = DayBin::new(item.bin_index, self.config.engine.bin_size_minutes)
                .expect("scheduler bins are valid");
            if self.engine.is_closed(&item.socket, bin, item.date) {
                continue;
            }
            self.charge()?;
            let alarm = self
                .engine
                .close_bin(&item.socket, bin, item.date, now)
                .expect("scheduler closes each (socket, bin, date) once");
            if let Some(alarm) = alarm {
                let record = LogRecord::new(
                    alarm.raised_at,
                    RecordKind::Alarm,
                    alarm.socket.clone(),
                    alarm_payload(alarm.date, alarm.bin),
                );
                self.charge()?;
                self.log.append(&record)?;
                self.counters.alarms += 1;
                self.route_alarm(&alarm)?;
                alarms.push(alarm);
            }
        }
        Ok(alarms)
    }

    fn route_alarm(&mut self, alarm: &Alarm) -> Result<(), GatewayError> {
        let Some(destination) = self.config.recipient_for(&alarm.socket).cloned() else {
            self.counters.undeliverable_alarms += 1;
            return Ok(());
        };
        self.charge()?;
        let delivery = Delivery::alarm(alarm, destination);
        match self.router.route(delivery, alarm.raised_at) {
            Ok(done) if done.status == crate::router::DeliveryStatus::Failed => {
                // Still logged; a restart will retry it.
                self.counters.undeliverable_alarms += 1;
                Ok(())
            }
            Ok(_) => Ok(()),
            Err(RouterError::NoTransport(_)) => {
                self.counters.undeliverable_alarms += 1;
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Route a direct-mode notification (socket → end user, bypassing the
    /// engine). Used by the simulator; counted like any other input.
    pub fn deliver_direct(&mut self, delivery: Delivery, now: Timestamp) -> Result<(), GatewayError> {
        self.charge()?;
        self.router.route(delivery, now)?;
        self.committed_inputs += 1;
        Ok(())
    }

    /// Read-only snapshot passthrough.
    pub fn snapshot(&self, socket: &SocketId) -> Result<Vec<crate::pattern::PatternState>, crate::pattern::EngineError> {
        self.engine.snapshot(socket)
    }
}

const UNATTRIBUTED_SOCKET: &str = "-";

fn unattributed_socket() -> SocketId {
    SocketId::new(UNATTRIBUTED_SOCKET).expect("`-` is a valid socket token")
}

/// Socket a sender address implies, when it is one of ours (`sim:<id>`).
fn sender_socket(env: &Envelope) -> Option<SocketId> {
    let rest = env.sender.as_str().strip_prefix("sim:")?;
    SocketId::new(rest).ok()
}

/// `<date> bin=<index>` payload of ALARM records.
fn alarm_payload(date: NaiveDate, bin: DayBin) -> String {
    format!("{} bin={}", date.format("%Y-%m-%d"), bin)
}

fn parse_alarm_payload(payload: &str, bin_size_minutes: u32) -> Option<(NaiveDate, DayBin)> {
    let (date, bin) = payload.split_once(' ')?;
    let date = parse_date(date).ok()?;
    let index: u32 = bin.strip_prefix("bin=")?.parse().ok()?;
    let bin = DayBin::new(index, bin_size_minutes).ok()?;
    Some((date, bin))
}

// ---------------------------------------------------------------------------
// Frame serving
// ---------------------------------------------------------------------------

/// Feed newline-delimited envelope frames from a reader, ticking on each
/// frame's timestamp and once more at the end. Inputs before `skip` are
/// assumed already committed (restart path).
pub fn serve_frames<R: BufRead>(gateway: &mut Gateway, reader: R) -> Result<(), GatewayError> {
    let mut last_at = None;
    for line in reader.lines() {
        let line = line.map_err(StoreError::Storage)?;
        if line.is_empty() {
            continue;
        }
        match Envelope::parse_frame(&line) {
            Ok(env) => {
                gateway.tick(env.received_at)?;
                gateway.ingest(&env)?;
                last_at = Some(env.received_at);
            }
            Err(e) => {
                let at = last_at.unwrap_or_else(|| {
                    Timestamp::parse_iso("1970-01-01T00:00:00").expect("epoch parses")
                });
                gateway.dead_letter_raw(at, &line, &e.to_string())?;
            }
        }
    }
    if let Some(at) = last_at {
        gateway.tick(at)?;
    }
    Ok(())
}

/// Serve a TCP listen endpoint: one frame per line, wall-clock ticks while
/// idle. Runs until the process is signaled.
pub fn serve_listener(gateway: &mut Gateway, endpoint: &str) -> Result<(), GatewayError> {
    let listener = std::net::TcpListener::bind(endpoint)
        .map_err(StoreError::Storage)?;
    listener.set_nonblocking(false).map_err(StoreError::Storage)?;
    loop {
        let (stream, _) = match listener.accept() {
            Ok(pair) => pair,
            Err(e) => return Err(StoreError::Storage(e).into()),
        };
        stream
            .set_read_timeout(Some(std::time::Duration::from_secs(1)))
            .map_err(StoreError::Storage)?;
        let mut reader = BufReader::new(stream);
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) => break, // connection closed
                Ok(_) => {
                    let trimmed = line.trim_end_matches('\n');
                    if trimmed.is_empty() {
                        continue;
                    }
                    match Envelope::parse_frame(trimmed) {
                        Ok(env) => {
                            gateway.tick(env.received_at)?;
                            gateway.ingest(&env)?;
                        }
                        Err(e) => {
                            gateway.dead_letter_raw(
                                Timestamp::now_local(),
                                trimmed,
                                &e.to_string(),
                            )?;
                        }
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    gateway.tick(Timestamp::now_local())?;
                }
                Err(e) => return Err(StoreError::Storage(e).into()),
            }
        }
        gateway.tick(Timestamp::now_local())?;
    }
}

/// Run the service per its configuration: file input on the logical clock,
/// or a TCP listener on the wall clock.
pub fn run(config: ServiceConfig) -> Result<(), GatewayError> {
    let input = config.input.clone();
    let listen = config.listen.clone();
    let mut gateway = Gateway::open(config)?;
    if let Some(path) = input {
        let file = std::fs::File::open(path).map_err(StoreError::Storage)?;
        serve_frames(&mut gateway, BufReader::new(file))
    } else if let Some(endpoint) = listen {
        serve_listener(&mut gateway, &endpoint)
    } else {
        serve_frames(&mut gateway, std::io::stdin().lock())
    }
}
