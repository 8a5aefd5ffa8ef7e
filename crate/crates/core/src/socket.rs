//! Virtual smart socket: a mains pass-through that samples load current,
//! detects appliance switch-on via a threshold with debounce, and emits
//! SMS-like envelopes addressed per its configured delivery mode.
//!
//! Detection is a three-state machine. A rise to or above `i_on_amps` makes
//! the socket a switch-on candidate; the candidate is confirmed once current
//! has stayed at or above the threshold for `debounce_seconds`, and the event
//! is stamped with the first crossing time so debounce length never shifts
//! activity times. Dips below threshold reset to off. Switch-off is not
//! reported.

use thiserror::Error;

use crate::codec::{serialize, Envelope, Message};
use crate::model::{
    Address, DeliveryMode, EventSource, SocketConfig, SocketId, SwitchOnEvent, Timestamp,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SocketError {
    /// Sample time went backwards for this socket.
    #[error("out-of-order sample for {socket}: {at} precedes {last}")]
    OutOfOrderSample { socket: SocketId, at: Timestamp, last: Timestamp },
    /// Current readings are RMS amperes and cannot be negative.
    #[error("invalid current reading {0}")]
    InvalidCurrent(f64),
}

/// One RMS current reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentSample {
    pub at: Timestamp,
    pub amps: f64,
}

impl CurrentSample {
    pub fn new(at: Timestamp, amps: f64) -> Result<Self, SocketError> {
        if amps.is_finite() && amps >= 0.0 {
            Ok(CurrentSample { at, amps })
        } else {
            Err(SocketError::InvalidCurrent(amps))
        }
    }
}

/// Detector tuning. Defaults ignore standby draw and contact bounce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Threshold current, amperes RMS. Must be positive.
    pub i_on_amps: f64,
    /// How long current must stay at or above threshold before a switch-on
    /// counts. Zero confirms on the first crossing sample.
    pub debounce_seconds: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { i_on_amps: 0.10, debounce_seconds: 5 }
    }
}

/// Load state of the simulated socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadState {
    Off,
    /// Above threshold, waiting out the debounce window.
    Candidate,
    On,
}

/// One virtual socket. Single-owner; the simulator advances sockets
/// sequentially, so there is no shared mutability across sockets.
#[derive(Debug, Clone)]
pub struct SocketState {
    id: SocketId,
    config: Option<SocketConfig>,
    load: LoadState,
    candidate_since: Option<Timestamp>,
    params: DetectorParams,
    last_sample_at: Option<Timestamp>,
    dropped_events: u64,
}

/// A notification envelope together with the address it should be carried to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundSms {
    pub to: Address,
    pub envelope: Envelope,
}

impl SocketState {
    pub fn new(id: SocketId, params: DetectorParams) -> Self {
        SocketState {
            id,
            config: None,
            load: LoadState::Off,
            candidate_since: None,
            params,
            last_sample_at: None,
            dropped_events: 0,
        }
    }

    pub fn id(&self) -> &SocketId {
        &self.id
    }

    pub fn config(&self) -> Option<&SocketConfig> {
        self.config.as_ref()
    }

    pub fn load(&self) -> LoadState {
        self.load
    }

    /// Events detected while unconfigured, hence never notified.
    pub fn dropped_events(&self) -> u64 {
        self.dropped_events
    }

    /// The socket's own sender address on the simulated GSM network.
    pub fn sender_address(&self) -> Address {
        Address::new(format!("sim:{}", self.id)).expect("socket id forms a valid sim address")
    }

    /// Apply a `CFG` message. Always accepted, latest wins: the destination
    /// replaces any prior one, and the mode becomes middleware exactly when
    /// the destination is the deployment's server address.
    pub fn apply_config(&mut self, destination: Address, server_address: &Address) {
        let mode = if &destination == server_address {
            DeliveryMode::Middleware
        } else {
            DeliveryMode::Direct
        };
        self.config = Some(SocketConfig { socket: self.id.clone(), destination, mode });
    }

    /// Feed one current sample, in non-decreasing time order. Returns the
    /// switch-on event confirmed by this sample, if any; exactly one event is
    /// produced per off-to-on transition, stamped at the threshold-crossing
    /// time.
    pub fn feed_sample(&mut self, sample: &CurrentSample) -> Result<Option<SwitchOnEvent>, SocketError> {
        if !(sample.amps.is_finite() && sample.amps >= 0.0) {
            return Err(SocketError::InvalidCurrent(sample.amps));
        }
        if let Some(last) = self.last_sample_at {
            if sample.at < last {
                return Err(SocketError::OutOfOrderSample {
                    socket: self.id.clone(),
                    at: sample.at,
                    last,
                });
            }
        }
        self.last_sample_at = Some(sample.at);

        if sample.amps >= self.params.i_on_amps {
            if self.load == LoadState::Off {
                self.load = LoadState::Candidate;
                self.candidate_since = Some(sample.at);
            }
            if self.load == LoadState::Candidate {
                let since = self.candidate_since.expect("candidate always has a start time");
                if sample.at.seconds_since(since) >= self.params.debounce_seconds as i64 {
                    self.load = LoadState::On;
                    self.candidate_since = None;
                    return Ok(Some(SwitchOnEvent {
                        socket: self.id.clone(),
                        at: since,
                        source: EventSource::DeviceReported,
                    }));
                }
            }
        } else {
            // Below threshold: flicker rejection and unreported switch-off.
            self.load = LoadState::Off;
            self.candidate_since = None;
        }
        Ok(None)
    }

    /// Wrap a detected event in a notification envelope addressed per the
    /// socket's config. Unconfigured sockets never emit; the event is counted
    /// as dropped instead.
    pub fn emit_notification(&mut self, event: &SwitchOnEvent, now: Timestamp) -> Option<OutboundSms> {
        debug_assert_eq!(event.socket, self.id);
        let Some(config) = &self.config else {
            self.dropped_events += 1;
            return None;
        };
        let body = serialize(&Message::Notification {
            socket: self.id.clone(),
            at_override: Some(event.at),
        });
        let envelope = Envelope::new(self.sender_address(), now, body)
            .expect("serialized notification is valid SMS");
        Some(OutboundSms { to: config.destination.clone(), envelope })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeliveryMode;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse_iso(s).unwrap()
    }

    fn socket(id: &str) -> SocketState {
        SocketState::new(SocketId::new(id).unwrap(), DetectorParams::default())
    }

    fn addr(s: &str) -> Address {
        Address::new(s).unwrap()
    }

    fn sample(state: &mut SocketState, at: &str, amps: f64) -> Option<SwitchOnEvent> {
        state.feed_sample(&CurrentSample::new(ts(at), amps).unwrap()).unwrap()
    }

    #[test]
    fn config_destination_selects_mode() {
        let server = addr("+10000000000");
        let mut s = socket("S001");
        s.apply_config(addr("+10000000000"), &server);
        assert_eq!(s.config().unwrap().mode, DeliveryMode::Middleware);
        let mut s = socket("S001");
        s.apply_config(addr("+20000000000"), &server);
        assert_eq!(s.config().unwrap().mode, DeliveryMode::Direct);
    }

    #[test]
    fn reconfiguration_latest_wins() {
        let server = addr("+10000000000");
        let mut s = socket("S001");
        s.apply_config(addr("+20000000000"), &server);
        assert_eq!(s.config().unwrap().mode, DeliveryMode::Direct);
        s.apply_config(addr("+10000000000"), &server);
        let cfg = s.config().unwrap();
        assert_eq!(cfg.mode, DeliveryMode::Middleware);
        assert_eq!(cfg.destination, addr("+10000000000"));
    }

    // Sustained current above threshold for the debounce window emits one
    // event, stamped at the first crossing.
    #[test]
    fn sustained_current_confirms_at_crossing_time() {
        let mut s = socket("S001");
        assert_eq!(sample(&mut s, "2015-02-10T08:00:00", 0.5), None);
        assert_eq!(s.load(), LoadState::Candidate);
        let event = sample(&mut s, "2015-02-10T08:00:05", 0.5).unwrap();
        assert_eq!(event.at, ts("2015-02-10T08:00:00"));
        assert_eq!(s.load(), LoadState::On);
    }

    #[test]
    fn flicker_rejected_by_debounce() {
        let mut s = socket("S001");
        assert_eq!(sample(&mut s, "2015-02-10T08:00:00", 0.5), None);
        assert_eq!(sample(&mut s, "2015-02-10T08:00:02", 0.0), None);
        assert_eq!(s.load(), LoadState::Off);
        // And the next rise starts a fresh candidate window.
        assert_eq!(sample(&mut s, "2015-02-10T08:00:03", 0.5), None);
        let event = sample(&mut s, "2015-02-10T08:00:08", 0.5).unwrap();
        assert_eq!(event.at, ts("2015-02-10T08:00:03"));
    }

    #[test]
    fn no_retrigger_while_on() {
        let mut s = socket("S001");
        sample(&mut s, "2015-02-10T08:00:00", 0.5);
        sample(&mut s, "2015-02-10T08:00:05", 0.5);
        assert_eq!(s.load(), LoadState::On);
        assert_eq!(sample(&mut s, "2015-02-10T08:01:00", 5.0), None);
        assert_eq!(sample(&mut s, "2015-02-10T08:02:00", 5.0), None);
    }

    #[test]
    fn switch_off_not_reported_and_cycle_restarts() {
        let mut s = socket("S001");
        sample(&mut s, "2015-02-10T08:00:00", 0.5);
        sample(&mut s, "2015-02-10T08:00:05", 0.5);
        assert_eq!(sample(&mut s, "2015-02-10T09:00:00", 0.01), None);
        assert_eq!(s.load(), LoadState::Off);
        sample(&mut s, "2015-02-10T10:00:00", 0.5);
        let event = sample(&mut s, "2015-02-10T10:00:05", 0.5).unwrap();
        assert_eq!(event.at, ts("2015-02-10T10:00:00"));
    }

    #[test]
    fn zero_debounce_confirms_on_first_crossing() {
        let mut s = SocketState::new(
            SocketId::new("S001").unwrap(),
            DetectorParams { i_on_amps: 0.10, debounce_seconds: 0 },
        );
        let event = sample(&mut s, "2015-02-10T08:00:00", 0.5).unwrap();
        assert_eq!(event.at, ts("2015-02-10T08:00:00"));
        assert_eq!(s.load(), LoadState::On);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut s = socket("S001");
        assert_eq!(sample(&mut s, "2015-02-10T08:00:00", 0.10), None);
        assert_eq!(s.load(), LoadState::Candidate);
    }

    #[test]
    fn out_of_order_sample_rejected() {
        let mut s = socket("S001");
        sample(&mut s, "2015-02-10T08:00:05", 0.0);
        let err = s
            .feed_sample(&CurrentSample::new(ts("2015-02-10T08:00:04"), 0.0).unwrap())
            .unwrap_err();
        assert!(matches!(err, SocketError::OutOfOrderSample { .. }));
    }

    #[test]
    fn negative_current_rejected() {
        assert!(CurrentSample::new(ts("2015-02-10T08:00:00"), -0.1).is_err());
        assert!(CurrentSample::new(ts("2015-02-10T08:00:00"), f64::NAN).is_err());
    }

    #[test]
    fn middleware_socket_emits_to_server_with_override() {
        let server = addr("+10000000000");
        let mut s = socket("S001");
        s.apply_config(server.clone(), &server);
        let event = SwitchOnEvent {
            socket: SocketId::new("S001").unwrap(),
            at: ts("2015-02-10T10:30:00"),
            source: EventSource::DeviceReported,
        };
        let out = s.emit_notification(&event, ts("2015-02-10T10:30:02")).unwrap();
        assert_eq!(out.to, server);
        assert_eq!(out.envelope.body, "ON S001 @2015-02-10T10:30:00");
        assert_eq!(out.envelope.sender, addr("sim:S001"));
        assert_eq!(out.envelope.received_at, ts("2015-02-10T10:30:02"));
    }

    #[test]
    fn direct_socket_emits_to_end_user() {
        let server = addr("+10000000000");
        let relative = addr("+20000000000");
        let mut s = socket("S001");
        s.apply_config(relative.clone(), &server);
        let event = SwitchOnEvent {
            socket: SocketId::new("S001").unwrap(),
            at: ts("2015-02-10T10:30:00"),
            source: EventSource::DeviceReported,
        };
        let out = s.emit_notification(&event, ts("2015-02-10T10:30:02")).unwrap();
        assert_eq!(out.to, relative);
    }

    #[test]
    fn unconfigured_socket_drops_events() {
        let mut s = socket("S001");
        let event = SwitchOnEvent {
            socket: SocketId::new("S001").unwrap(),
            at: ts("2015-02-10T10:30:00"),
            source: EventSource::DeviceReported,
        };
        assert_eq!(s.emit_notification(&event, ts("2015-02-10T10:30:02")), None);
        assert_eq!(s.emit_notification(&event, ts("2015-02-10T10:30:03")), None);
        assert_eq!(s.dropped_events(), 2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        // Independent oracle: scan the raw trace for maximal runs of samples
        // at or above threshold; a run counts iff current stayed up for at
        // least the debounce window, and its event time is the run's first
        // sample.
        fn expected_events(trace: &[(i64, f64)], i_on: f64, debounce: i64) -> Vec<i64> {
            let mut events = Vec::new();
            let mut run_start: Option<i64> = None;
            let mut emitted = false;
            for &(t, amps) in trace {
                if amps >= i_on {
                    let start = *run_start.get_or_insert(t);
                    if !emitted && t - start >= debounce {
                        events.push(start);
                        emitted = true;
                    }
                } else {
                    run_start = None;
                    emitted = false;
                }
            }
            events
        }

        fn arb_trace() -> impl Strategy<Value = Vec<(i64, f64)>> {
            (
                proptest::collection::vec((1i64..10, prop_oneof![Just(0.0f64), 0.0f64..0.4]), 0..200),
            )
                .prop_map(|(steps,)| {
                    let mut t = 0;
                    steps
                        .into_iter()
                        .map(|(dt, amps)| {
                            t += dt;
                            (t, amps)
                        })
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn detector_matches_trace_scanner(trace in arb_trace(), debounce in 0u64..12) {
                let base = Timestamp::parse_iso("2015-02-10T00:00:00").unwrap();
                let mut s = SocketState::new(
                    SocketId::new("S001").unwrap(),
                    DetectorParams { i_on_amps: 0.10, debounce_seconds: debounce },
                );
                let mut got = Vec::new();
                for &(t, amps) in &trace {
                    let at = base.plus_seconds(t);
                    if let Some(e) = s.feed_sample(&CurrentSample::new(at, amps).unwrap()).unwrap() {
                        got.push(e.at.seconds_since(base));
                    }
                }
                prop_assert_eq!(got, expected_events(&trace, 0.10, debounce as i64));
            }

            #[test]
            fn unconfigured_socket_never_emits(trace in arb_trace()) {
                let base = Timestamp::parse_iso("2015-02-10T00:00:00").unwrap();
                let mut s = socket("S001");
                let mut envelopes = 0;
                for &(t, amps) in &trace {
                    let at = base.plus_seconds(t);
                    if let Some(e) = s.feed_sample(&CurrentSample::new(at, amps).unwrap()).unwrap() {
                        if s.emit_notification(&e, at).is_some() {
                            envelopes += 1;
                        }
                    }
                }
                prop_assert_eq!(envelopes, 0);
            }
        }
    }
}
