//! The middleware core: per-(socket, bin) recurring-usage patterns learned
//! from switch-on events, and absence alarms raised when an active pattern's
//! bin closes with no event.
//!
//! A pattern is a streak: the first switch-on in a bin on a given day counts
//! one hit; a hit on the immediately following day extends the streak, a gap
//! restarts it at one. Once the streak reaches `pattern_days` the bin is
//! active, and a day without any event in that bin — confirmed when the
//! scheduler closes the bin after its grace period — raises exactly one
//! alarm. Firing resets the streak to zero, so the pattern must re-form over
//! fresh consecutive days before it can alarm again; a permanently changed
//! routine yields one alarm, not a storm.
//!
//! Every bin of a socket counts independently, so one socket can hold a
//! morning-cooker pattern and an evening-kettle pattern at the same time.
//!
//! The engine is deterministic: the alarm sequence is a pure function of the
//! ingested event sequence, the close schedule and the parameters. Closing is
//! deliberately left to the caller (the gateway's scheduler) so tests and
//! replays can drive it on logical time.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use thiserror::Error;

use crate::model::{
    bin_of, bins_per_day, is_next_day, Alarm, DayBin, ModelError, SocketId, SwitchOnEvent,
    Timestamp,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    /// Event time regressed past the per-socket high-water mark by more than
    /// the reorder tolerance.
    #[error("out-of-order event for {socket}: {at} precedes high-water {high_water}")]
    OutOfOrderEvent { socket: SocketId, at: Timestamp, high_water: Timestamp },
    /// The scheduler closed the same (socket, bin, date) twice.
    #[error("duplicate close for {socket} bin {bin} on {date}")]
    DuplicateClose { socket: SocketId, bin: DayBin, date: NaiveDate },
    /// No events or configuration ever seen for this socket.
    #[error("unknown socket {0}")]
    UnknownSocket(SocketId),
    /// Parameters violate their invariants.
    #[error(transparent)]
    Params(#[from] ModelError),
}

/// Engine tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineParams {
    /// Consecutive days with a hit before a bin's pattern is active (K ≥ 2).
    pub pattern_days: u32,
    /// Minutes past a bin's end before absence may be declared; absorbs
    /// SMS delivery latency.
    pub grace_minutes: u32,
    /// Width of a day bin; must divide 1440.
    pub bin_size_minutes: u32,
    /// How many seconds an event may regress behind the per-socket
    /// high-water mark before it is rejected. The gateway serializes per
    /// socket, so the default is zero: out-of-order input is an error,
    /// not silently reordered.
    pub reorder_tolerance_seconds: u64,
}

impl EngineParams {
    pub fn new(bin_size_minutes: u32, pattern_days: u32, grace_minutes: u32) -> Result<Self, ModelError> {
        bins_per_day(bin_size_minutes)?;
        if pattern_days < 2 {
            // K = 1 would alarm off a single observation; "several" starts at 2.
            return Err(ModelError::InvalidPatternDays(pattern_days));
        }
        Ok(EngineParams {
            pattern_days,
            grace_minutes,
            bin_size_minutes,
            reorder_tolerance_seconds: 0,
        })
    }
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            pattern_days: 3,
            grace_minutes: 15,
            bin_size_minutes: 60,
            reorder_tolerance_seconds: 0,
        }
    }
}

/// Read-only view of one bin's streak.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternState {
    pub socket: SocketId,
    pub bin: DayBin,
    pub consecutive_hits: u32,
    pub last_hit_date: Option<NaiveDate>,
    pub active: bool,
}

#[derive(Debug, Default, Clone)]
struct BinStreak {
    consecutive_hits: u32,
    last_hit_date: Option<NaiveDate>,
    /// Hit dates not yet consumed by a close, so a close can answer "was
    /// there an event in this bin on that date" exactly.
    pending_hits: BTreeSet<NaiveDate>,
    /// Latest date this bin has been closed for; guards DuplicateClose.
    closed_through: Option<NaiveDate>,
}

#[derive(Debug, Default, Clone)]
struct SocketPatterns {
    bins: BTreeMap<u32, BinStreak>,
    high_water: Option<Timestamp>,
}

/// Incremental pattern learner. State is partitioned by socket; operations
/// on one socket are strictly serialized by the single-threaded caller.
#[derive(Debug, Clone)]
pub struct PatternEngine {
    params: EngineParams,
    sockets: HashMap<SocketId, SocketPatterns>,
}

impl PatternEngine {
    pub fn new(params: EngineParams) -> Self {
        PatternEngine { params, sockets: HashMap::new() }
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    /// Per-socket event-time high-water mark, if any event was seen.
    pub fn high_water(&self, socket: &SocketId) -> Option<Timestamp> {
        self.sockets.get(socket).and_then(|s| s.high_water)
    }

    /// Make a socket known without counting anything, so a socket seen only
    /// through configuration still snapshots (as empty) instead of erroring.
    pub fn touch_socket(&mut self, socket: &SocketId) {
        self.sockets.entry(socket.clone()).or_default();
    }

    pub fn known_sockets(&self) -> impl Iterator<Item = &SocketId> {
        self.sockets.keys()
    }

    /// Count one switch-on event. The first event per (socket, bin, date)
    /// counts; duplicates within the same bin and date are no-ops. A hit the
    /// day after the last one extends the streak, anything later restarts it
    /// at one.
    pub fn ingest_event(&mut self, event: &SwitchOnEvent) -> Result<PatternState, EngineError> {
        let bin = bin_of(event.at, self.params.bin_size_minutes)?;
        let date = event.at.date();
        let entry = self.sockets.entry(event.socket.clone()).or_default();

        if let Some(hw) = entry.high_water {
            let tolerance = self.params.reorder_tolerance_seconds as i64;
            if hw.seconds_since(event.at) > tolerance {
                return Err(EngineError::OutOfOrderEvent {
                    socket: event.socket.clone(),
                    at: event.at,
                    high_water: hw,
                });
            }
        }
        entry.high_water = Some(entry.high_water.map_or(event.at, |hw| hw.max(event.at)));

        let streak = entry.bins.entry(bin.index()).or_default();
        match streak.last_hit_date {
            Some(last) if last >= date => {} // same-day duplicate (or stale within tolerance)
            Some(last) if is_next_day(last, date) => {
                streak.consecutive_hits += 1;
                streak.last_hit_date = Some(date);
            }
            _ => {
                streak.consecutive_hits = 1;
                streak.last_hit_date = Some(date);
            }
        }
        streak.pending_hits.insert(date);

        Ok(PatternState {
            socket: event.socket.clone(),
            bin,
            consecutive_hits: streak.consecutive_hits,
            last_hit_date: streak.last_hit_date,
            active: streak.consecutive_hits >= self.params.pattern_days,
        })
    }

    /// Close one (socket, bin, date): declare the day's observation window
    /// for that bin finished. Must be called once per triple, after the
    /// bin's end plus grace, in chronological order — the gateway's
    /// scheduler guarantees all three.
    ///
    /// If the bin's pattern is active and no event was ingested for the
    /// date, the absence alarm fires and the streak resets to zero so the
    /// pattern must re-form from scratch. Otherwise nothing changes.
    pub fn close_bin(
        &mut self,
        socket: &SocketId,
        bin: DayBin,
        date: NaiveDate,
        now: Timestamp,
    ) -> Result<Option<Alarm>, EngineError> {
        let Some(entry) = self.sockets.get_mut(socket) else {
            return Ok(None); // nothing ever seen: trivially inactive
        };
        let Some(streak) = entry.bins.get_mut(&bin.index()) else {
            return Ok(None);
        };
        if streak.closed_through.is_some_and(|closed| closed >= date) {
            return Err(EngineError::DuplicateClose { socket: socket.clone(), bin, date });
        }
        streak.closed_through = Some(date);

        let hit = streak.pending_hits.remove(&date);
        // Drop any older pending hits; their close dates have passed.
        streak.pending_hits = streak.pending_hits.split_off(&date);

        let active = streak.consecutive_hits >= self.params.pattern_days;
        if active && !hit {
            streak.consecutive_hits = 0;
            streak.last_hit_date = None;
            return Ok(Some(Alarm { socket: socket.clone(), bin, date, raised_at: now }));
        }
        Ok(None)
    }

    /// Whether this (socket, bin, date) has already been closed, either live
    /// or via a logged alarm. Lets a scheduler skip redundant closes when
    /// re-ticking over an already-covered span.
    pub fn is_closed(&self, socket: &SocketId, bin: DayBin, date: NaiveDate) -> bool {
        self.sockets
            .get(socket)
            .and_then(|s| s.bins.get(&bin.index()))
            .and_then(|b| b.closed_through)
            .is_some_and(|closed| closed >= date)
    }

    /// Apply an alarm reconstructed from the log: the streak was reset when
    /// it fired, and its (bin, date) is already closed.
    pub fn apply_logged_alarm(&mut self, socket: &SocketId, bin: DayBin, date: NaiveDate) {
        let entry = self.sockets.entry(socket.clone()).or_default();
        let streak = entry.bins.entry(bin.index()).or_default();
        streak.consecutive_hits = 0;
        streak.last_hit_date = None;
        streak.closed_through = Some(streak.closed_through.map_or(date, |c| c.max(date)));
        streak.pending_hits = streak.pending_hits.split_off(&date);
        streak.pending_hits.remove(&date);
    }

    /// All bins of a socket with a live streak, sorted by bin index.
    pub fn snapshot(&self, socket: &SocketId) -> Result<Vec<PatternState>, EngineError> {
        let entry = self
            .sockets
            .get(socket)
            .ok_or_else(|| EngineError::UnknownSocket(socket.clone()))?;
        Ok(entry
            .bins
            .iter()
            .filter(|(_, s)| s.consecutive_hits > 0)
            .map(|(&index, s)| PatternState {
                socket: socket.clone(),
                bin: DayBin::new(index, self.params.bin_size_minutes)
                    .expect("stored bins are in range"),
                consecutive_hits: s.consecutive_hits,
                last_hit_date: s.last_hit_date,
                active: s.consecutive_hits >= self.params.pattern_days,
            })
            .collect())
    }
}
