//! Shared domain vocabulary: identifiers, addresses, civil time, day bins,
//! switch-on events, socket configuration and absence alarms.
//!
//! All types here are immutable values and cheap to clone; the rest of the
//! crate builds on them.

use std::fmt;

use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use thiserror::Error;

/// Minutes in a civil day; every bin size must divide this evenly.
pub const MINUTES_PER_DAY: u32 = 1440;

/// Maximum length of a socket identifier token.
pub const MAX_SOCKET_ID_LEN: usize = 16;

/// Maximum length of an address token (phone or transport URI).
pub const MAX_ADDRESS_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    /// Socket id is empty, too long or contains a disallowed character.
    #[error("invalid socket id `{0}`")]
    InvalidSocketId(String),
    /// Address is neither `+<7..15 digits>` nor `<scheme>:<opaque>`.
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
    /// Timestamp is not of the form `YYYY-MM-DDTHH:MM:SS`.
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
    /// Date is not of the form `YYYY-MM-DD`.
    #[error("invalid date `{0}`")]
    InvalidDate(String),
    /// Bin size does not divide a day evenly.
    #[error("bin size {0} does not divide {MINUTES_PER_DAY} minutes")]
    InvalidBinSize(u32),
    /// Pattern formation needs at least two consecutive days.
    #[error("pattern days {0} below minimum of 2")]
    InvalidPatternDays(u32),
    /// Bin index is outside `[0, bins_per_day)`.
    #[error("bin index {index} out of range for bin size {bin_size_minutes}")]
    BinOutOfRange { index: u32, bin_size_minutes: u32 },
}

// ---------------------------------------------------------------------------
// SocketId
// ---------------------------------------------------------------------------

/// Short ASCII token naming one socket (1–16 chars, `[A-Za-z0-9_-]`).
///
/// Comparison is case-sensitive byte equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SocketId(String);

impl SocketId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.len() <= MAX_SOCKET_ID_LEN
            && value
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if ok {
            Ok(SocketId(value))
        } else {
            Err(ModelError::InvalidSocketId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SocketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for SocketId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SocketId::new(s)
    }
}

// ---------------------------------------------------------------------------
// Address
// ---------------------------------------------------------------------------

/// What kind of destination an [`Address`] names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressKind {
    /// E.164-like phone number: `+` followed by 7–15 digits.
    Phone,
    /// Transport URI token: `<scheme>:<opaque>`.
    Uri,
}

/// Delivery destination: a phone number or a transport URI token.
///
/// Phone form is validated as `+` followed by 7–15 digits. URI form is
/// `<scheme>:<opaque>` with a non-empty lowercase-alphanumeric scheme and a
/// non-empty opaque part; no whitespace or control characters anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(String);

impl Address {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if Self::is_phone(&value) || Self::is_uri(&value) {
            Ok(Address(value))
        } else {
            Err(ModelError::InvalidAddress(value))
        }
    }

    fn is_phone(s: &str) -> bool {
        let b = s.as_bytes();
        b.len() >= 8
            && b.len() <= 16
            && b[0] == b'+'
            && b[1..].iter().all(|c| c.is_ascii_digit())
    }

    fn is_uri(s: &str) -> bool {
        if s.len() > MAX_ADDRESS_LEN {
            return false;
        }
        match s.split_once(':') {
            Some((scheme, opaque)) => {
                !scheme.is_empty()
                    && scheme.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
                    && scheme.as_bytes()[0].is_ascii_lowercase()
                    && !opaque.is_empty()
                    && opaque.bytes().all(|b| b.is_ascii_graphic())
            }
            None => false,
        }
    }

    pub fn kind(&self) -> AddressKind {
        if self.0.starts_with('+') {
            AddressKind::Phone
        } else {
            AddressKind::Uri
        }
    }

    /// Scheme of a URI-form address; `None` for phone numbers.
    pub fn scheme(&self) -> Option<&str> {
        match self.kind() {
            AddressKind::Phone => None,
            AddressKind::Uri => self.0.split_once(':').map(|(s, _)| s),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Address {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::new(s)
    }
}

// ---------------------------------------------------------------------------
// Timestamp
// ---------------------------------------------------------------------------

/// Calendar date plus time-of-day at one-second resolution, in the single
/// civil timezone of the deployment. No DST shifts are modeled.
///
/// The wire form is exactly `YYYY-MM-DDTHH:MM:SS` (19 characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(NaiveDateTime);

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

impl Timestamp {
    pub fn new(inner: NaiveDateTime) -> Self {
        Timestamp(inner)
    }

    /// Parse the strict 19-character `YYYY-MM-DDTHH:MM:SS` form.
    pub fn parse_iso(s: &str) -> Result<Self, ModelError> {
        // chrono would also accept unpadded fields; insist on the canonical shape.
        if s.len() != 19 {
            return Err(ModelError::InvalidTimestamp(s.to_string()));
        }
        NaiveDateTime::parse_from_str(s, ISO_FORMAT)
            .map(Timestamp)
            .map_err(|_| ModelError::InvalidTimestamp(s.to_string()))
    }

    pub fn from_ymd_hms(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        min: u32,
        sec: u32,
    ) -> Option<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)?;
        let time = NaiveTime::from_hms_opt(hour, min, sec)?;
        Some(Timestamp(date.and_time(time)))
    }

    /// Current wall-clock time in the local civil timezone.
    pub fn now_local() -> Self {
        Timestamp(chrono::Local::now().naive_local())
    }

    pub fn date(&self) -> NaiveDate {
        self.0.date()
    }

    pub fn minutes_since_midnight(&self) -> u32 {
        self.0.time().hour() * 60 + self.0.time().minute()
    }

    /// Exact difference `self - earlier`, in seconds.
    pub fn seconds_since(&self, earlier: Timestamp) -> i64 {
        self.0.signed_duration_since(earlier.0).num_seconds()
    }

    pub fn plus_seconds(&self, seconds: i64) -> Self {
        Timestamp(self.0 + chrono::Duration::seconds(seconds))
    }

    pub fn plus_minutes(&self, minutes: i64) -> Self {
        Timestamp(self.0 + chrono::Duration::minutes(minutes))
    }

    pub fn inner(&self) -> NaiveDateTime {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(ISO_FORMAT))
    }
}

impl std::str::FromStr for Timestamp {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse_iso(s)
    }
}

/// Parse a strict `YYYY-MM-DD` calendar date.
pub fn parse_date(s: &str) -> Result<NaiveDate, ModelError> {
    if s.len() != 10 {
        return Err(ModelError::InvalidDate(s.to_string()));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| ModelError::InvalidDate(s.to_string()))
}

// ---------------------------------------------------------------------------
// DayBin
// ---------------------------------------------------------------------------

/// Fixed-width time-of-day interval index in `[0, bins_per_day)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DayBin(u32);

impl DayBin {
    pub fn new(index: u32, bin_size_minutes: u32) -> Result<Self, ModelError> {
        let per_day = bins_per_day(bin_size_minutes)?;
        if index < per_day {
            Ok(DayBin(index))
        } else {
            Err(ModelError::BinOutOfRange { index, bin_size_minutes })
        }
    }

    pub fn index(&self) -> u32 {
        self.0
    }

    /// Start of this bin on the given date.
    pub fn start(&self, date: NaiveDate, bin_size_minutes: u32) -> Timestamp {
        let midnight = Timestamp(date.and_time(NaiveTime::MIN));
        midnight.plus_minutes((self.0 * bin_size_minutes) as i64)
    }

    /// End of this bin on the given date (start of the next bin; midnight of
    /// the following day for the last bin).
    pub fn end(&self, date: NaiveDate, bin_size_minutes: u32) -> Timestamp {
        let midnight = Timestamp(date.and_time(NaiveTime::MIN));
        midnight.plus_minutes(((self.0 + 1) * bin_size_minutes) as i64)
    }

    /// `HH:MM-HH:MM` rendering of the bin window; the end of the last bin is
    /// rendered as `24:00`.
    pub fn window(&self, bin_size_minutes: u32) -> String {
        let start = self.0 * bin_size_minutes;
        let end = (self.0 + 1) * bin_size_minutes;
        format!(
            "{:02}:{:02}-{:02}:{:02}",
            start / 60,
            start % 60,
            end / 60,
            end % 60
        )
    }
}

impl fmt::Display for DayBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of bins per day for a valid bin size.
pub fn bins_per_day(bin_size_minutes: u32) -> Result<u32, ModelError> {
    if bin_size_minutes == 0 || MINUTES_PER_DAY % bin_size_minutes != 0 {
        Err(ModelError::InvalidBinSize(bin_size_minutes))
    } else {
        Ok(MINUTES_PER_DAY / bin_size_minutes)
    }
}

/// Bin containing `at`: `floor(minutes-since-midnight / bin_size_minutes)`.
///
/// A timestamp exactly on a bin boundary belongs to the later bin.
pub fn bin_of(at: Timestamp, bin_size_minutes: u32) -> Result<DayBin, ModelError> {
    bins_per_day(bin_size_minutes)?;
    Ok(DayBin(at.minutes_since_midnight() / bin_size_minutes))
}

// ---------------------------------------------------------------------------
// Events, configuration, alarms
// ---------------------------------------------------------------------------

/// How a switch-on event entered the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventSource {
    /// Reported live by a (simulated) device.
    DeviceReported,
    /// Reconstructed from the event log.
    Replayed,
}

/// A socket detected an appliance turning on. `at` is the authoritative
/// event time used for binning, regardless of processing time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchOnEvent {
    pub socket: SocketId,
    pub at: Timestamp,
    pub source: EventSource,
}

/// Where a socket sends its notifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Straight to an end-user (relative, caregiver); bypasses the middleware.
    Direct,
    /// To the intermediate server, which learns patterns and routes alerts.
    Middleware,
}

/// Active per-socket configuration; reconfiguration replaces it atomically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocketConfig {
    pub socket: SocketId,
    pub destination: Address,
    pub mode: DeliveryMode,
}

/// Absence alert for one (socket, bin, date) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alarm {
    pub socket: SocketId,
    pub bin: DayBin,
    pub date: NaiveDate,
    pub raised_at: Timestamp,
}

impl Alarm {
    /// `"<socket>/<date>/<bin>"`; at most one alarm per key is ever emitted.
    pub fn dedupe_key(&self) -> String {
        alarm_dedupe_key(&self.socket, self.date, self.bin)
    }
}

/// Dedupe key shared by the engine and the router.
pub fn alarm_dedupe_key(socket: &SocketId, date: NaiveDate, bin: DayBin) -> String {
    format!("{}/{}/{}", socket, date.format("%Y-%m-%d"), bin)
}

/// Day before `date` in plain civil time.
pub fn previous_day(date: NaiveDate) -> NaiveDate {
    date.checked_sub_days(Days::new(1))
        .expect("date arithmetic underflow")
}

/// Day after `date` in plain civil time.
pub fn next_day(date: NaiveDate) -> NaiveDate {
    date.checked_add_days(Days::new(1))
        .expect("date arithmetic overflow")
}

/// True when `a` and `b` are consecutive calendar days (`b = a + 1`).
pub fn is_next_day(a: NaiveDate, b: NaiveDate) -> bool {
    next_day(a) == b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse_iso(s).unwrap()
    }

    #[test]
    fn socket_id_accepts_token_charset() {
        assert!(SocketId::new("S001").is_ok());
        assert!(SocketId::new("a-b_C9").is_ok());
        assert!(SocketId::new("x".repeat(16)).is_ok());
    }

    #[test]
    fn socket_id_rejects_bad_tokens() {
        assert!(SocketId::new("").is_err());
        assert!(SocketId::new("x".repeat(17)).is_err());
        assert!(SocketId::new("has space").is_err());
        assert!(SocketId::new("naïve").is_err());
        assert!(SocketId::new("a.b").is_err());
    }

    #[test]
    fn address_phone_form() {
        assert_eq!(Address::new("+37126123456").unwrap().kind(), AddressKind::Phone);
        assert!(Address::new("+1234567").is_ok()); // 7 digits
        assert!(Address::new("+123456789012345").is_ok()); // 15 digits
        assert!(Address::new("+123456").is_err()); // 6 digits
        assert!(Address::new("+1234567890123456").is_err()); // 16 digits
        assert!(Address::new("37126123456").is_err());
        assert!(Address::new("+37 26123456").is_err());
    }

    #[test]
    fn address_uri_form() {
        let a = Address::new("push:user42").unwrap();
        assert_eq!(a.kind(), AddressKind::Uri);
        assert_eq!(a.scheme(), Some("push"));
        assert!(Address::new("sim:S001").is_ok());
        assert!(Address::new(":opaque").is_err());
        assert!(Address::new("push:").is_err());
        assert!(Address::new("Push:user").is_err());
        assert!(Address::new("push user").is_err());
        assert!(Address::new(format!("w:{}", "x".repeat(80))).is_err());
    }

    #[test]
    fn timestamp_strict_iso() {
        let t = ts("2015-02-10T10:30:00");
        assert_eq!(t.to_string(), "2015-02-10T10:30:00");
        assert!(Timestamp::parse_iso("2015-2-10T10:30:00").is_err());
        assert!(Timestamp::parse_iso("2015-02-10 10:30:00").is_err());
        assert!(Timestamp::parse_iso("2015-02-10T10:30:00Z").is_err());
        assert!(Timestamp::parse_iso("2015-02-30T10:30:00").is_err());
    }

    #[test]
    fn timestamp_arithmetic_is_exact() {
        let a = ts("2015-02-10T10:30:00");
        let b = ts("2015-02-11T10:30:05");
        assert_eq!(b.seconds_since(a), 86_405);
        assert_eq!(a.plus_seconds(86_405), b);
    }

    // bin_of: 10:30:00, 60 → bin 10
    #[test]
    fn bin_of_mid_morning() {
        assert_eq!(bin_of(ts("2015-02-10T10:30:00"), 60).unwrap().index(), 10);
    }

    // bin_of: 00:00:00, 60 → bin 0
    #[test]
    fn bin_of_midnight_boundary() {
        assert_eq!(bin_of(ts("2015-02-10T00:00:00"), 60).unwrap().index(), 0);
    }

    // bin_of: 23:59:59, 30 → bin 47
    #[test]
    fn bin_of_last_bin() {
        assert_eq!(bin_of(ts("2015-02-10T23:59:59"), 30).unwrap().index(), 47);
    }

    #[test]
    fn bin_of_rejects_invalid_size() {
        assert_eq!(bin_of(ts("2015-02-10T10:30:00"), 7), Err(ModelError::InvalidBinSize(7)));
        assert_eq!(bin_of(ts("2015-02-10T10:30:00"), 0), Err(ModelError::InvalidBinSize(0)));
    }

    #[test]
    fn bin_boundary_belongs_to_later_bin() {
        assert_eq!(bin_of(ts("2015-02-10T11:00:00"), 60).unwrap().index(), 11);
        assert_eq!(bin_of(ts("2015-02-10T10:59:59"), 60).unwrap().index(), 10);
    }

    // Exhaustive over all 1440 minutes for s=60: bins change exactly at
    // 60-minute boundaries.
    #[test]
    fn bin_of_exhaustive_hourly() {
        let midnight = ts("2015-02-10T00:00:00");
        for m in 0..MINUTES_PER_DAY {
            let t = midnight.plus_minutes(m as i64);
            assert_eq!(bin_of(t, 60).unwrap().index(), m / 60);
        }
    }

    #[test]
    fn bin_window_rendering() {
        assert_eq!(DayBin(10).window(60), "10:00-11:00");
        assert_eq!(DayBin(23).window(60), "23:00-24:00");
        assert_eq!(DayBin(47).window(30), "23:30-24:00");
        assert_eq!(DayBin(1).window(90), "01:30-03:00");
    }

    #[test]
    fn bin_start_end() {
        let d = parse_date("2015-02-10").unwrap();
        let b = DayBin(10);
        assert_eq!(b.start(d, 60), ts("2015-02-10T10:00:00"));
        assert_eq!(b.end(d, 60), ts("2015-02-10T11:00:00"));
        assert_eq!(DayBin(23).end(d, 60), ts("2015-02-11T00:00:00"));
    }

    #[test]
    fn alarm_dedupe_key_format() {
        let alarm = Alarm {
            socket: SocketId::new("S001").unwrap(),
            bin: DayBin(10),
            date: parse_date("2015-02-13").unwrap(),
            raised_at: ts("2015-02-13T11:15:00"),
        };
        assert_eq!(alarm.dedupe_key(), "S001/2015-02-13/10");
    }

    #[test]
    fn day_stepping() {
        let d = parse_date("2015-03-01").unwrap();
        assert_eq!(previous_day(d), parse_date("2015-02-28").unwrap());
        assert!(is_next_day(parse_date("2015-02-28").unwrap(), d));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn valid_bin_sizes() -> impl Strategy<Value = u32> {
            prop::sample::select(
                (1..=MINUTES_PER_DAY)
                    .filter(|s| MINUTES_PER_DAY % s == 0)
                    .collect::<Vec<_>>(),
            )
        }

        proptest! {
            #[test]
            fn bin_in_range(secs in 0i64..86_400, size in valid_bin_sizes()) {
                let t = Timestamp::parse_iso("2020-01-01T00:00:00").unwrap().plus_seconds(secs);
                let bin = bin_of(t, size).unwrap();
                prop_assert!(bin.index() < MINUTES_PER_DAY / size);
            }

            #[test]
            fn bin_monotone_within_day(a in 0i64..86_400, b in 0i64..86_400, size in valid_bin_sizes()) {
                let base = Timestamp::parse_iso("2020-01-01T00:00:00").unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let bl = bin_of(base.plus_seconds(lo), size).unwrap();
                let bh = bin_of(base.plus_seconds(hi), size).unwrap();
                prop_assert!(bl.index() <= bh.index());
            }

            #[test]
            fn bins_differ_iff_interval_differs(a in 0u32..MINUTES_PER_DAY, b in 0u32..MINUTES_PER_DAY, size in valid_bin_sizes()) {
                let base = Timestamp::parse_iso("2020-01-01T00:00:00").unwrap();
                let ba = bin_of(base.plus_minutes(a as i64), size).unwrap();
                let bb = bin_of(base.plus_minutes(b as i64), size).unwrap();
                prop_assert_eq!(ba != bb, a / size != b / size);
            }
        }
    }
}
