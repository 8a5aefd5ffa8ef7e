//! Virtual smart sockets that report appliance switch-on over an SMS-like
//! protocol, plus the middleware that learns per-socket time-of-day usage
//! patterns and raises proactive absence alarms.
//!
//! The crate is organized around the flow of one notification:
//!
//! * [`socket`] — virtual sockets sample load current, detect switch-on via a
//!   threshold with debounce, and emit envelopes per their configured mode.
//! * [`codec`] — the text protocol carried in those envelopes.
//! * [`gateway`] — the ingestion service: logs events write-ahead, feeds the
//!   pattern engine, schedules bin closes, routes alarms.
//! * [`pattern`] — consecutive-day usage patterns and absence alarms.
//! * [`router`] — pluggable delivery transports with retry and dedupe.
//! * [`store`] — the append-only event log everything replays from.

pub mod codec;
pub mod config;
pub mod gateway;
pub mod pattern;
pub mod router;
pub mod model;
pub mod scenario;
pub mod socket;
pub mod store;

pub use codec::{parse, serialize, CodecError, Envelope, Message};
pub use model::{
    bin_of, bins_per_day, Address, AddressKind, Alarm, DayBin, DeliveryMode, EventSource,
    ModelError, SocketConfig, SocketId, SwitchOnEvent, Timestamp,
};
