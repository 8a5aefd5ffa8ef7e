//! The SMS-like text protocol spoken between sockets, gateway and transports.
//!
//! Two body forms exist, single-line ASCII, at most 160 characters, tokens
//! separated by exactly one space:
//!
//! ```text
//! CFG <address>
//! ON <socket_id>
//! ON <socket_id> @<iso8601>
//! ```
//!
//! Envelopes travel between processes as one tab-separated frame per line:
//! `<iso8601>\t<sender>\t<body>`.

use thiserror::Error;

use crate::model::{Address, SocketId, Timestamp};

/// SMS body length cap.
pub const MAX_BODY_LEN: usize = 160;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// First token is not a known keyword.
    #[error("unknown keyword `{0}`")]
    UnknownKeyword(String),
    /// Address token failed validation.
    #[error("malformed address `{0}`")]
    MalformedAddress(String),
    /// Socket id token failed validation.
    #[error("malformed socket id `{0}`")]
    MalformedSocketId(String),
    /// Timestamp token failed validation.
    #[error("malformed timestamp `{0}`")]
    MalformedTimestamp(String),
    /// Body is not single-line ASCII of at most 160 characters.
    #[error("invalid body: {0}")]
    InvalidBody(String),
    /// Envelope frame is not `<iso8601>\t<sender>\t<body>`.
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
}

/// SMS-like message wrapper: who sent it, when it arrived, raw body text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub sender: Address,
    pub received_at: Timestamp,
    pub body: String,
}

impl Envelope {
    /// Validates the body invariant: ASCII, no control characters, ≤ 160.
    pub fn new(sender: Address, received_at: Timestamp, body: impl Into<String>) -> Result<Self, CodecError> {
        let body = body.into();
        check_body(&body)?;
        Ok(Envelope { sender, received_at, body })
    }

    /// Parse one `<iso8601>\t<sender>\t<body>` frame line.
    pub fn parse_frame(line: &str) -> Result<Self, CodecError> {
        let mut parts = line.splitn(3, '\t');
        let (ts, sender, body) = match (parts.next(), parts.next(), parts.next()) {
            (Some(ts), Some(sender), Some(body)) => (ts, sender, body),
            _ => return Err(CodecError::MalformedFrame(line.to_string())),
        };
        let received_at = Timestamp::parse_iso(ts)
            .map_err(|_| CodecError::MalformedFrame(format!("bad timestamp `{ts}`")))?;
        let sender = Address::new(sender)
            .map_err(|_| CodecError::MalformedFrame(format!("bad sender `{sender}`")))?;
        Envelope::new(sender, received_at, body)
    }

    /// Canonical frame line (no trailing newline).
    pub fn to_frame(&self) -> String {
        format!("{}\t{}\t{}", self.received_at, self.sender, self.body)
    }
}

fn check_body(body: &str) -> Result<(), CodecError> {
    if body.len() > MAX_BODY_LEN {
        return Err(CodecError::InvalidBody(format!("{} chars exceeds {MAX_BODY_LEN}", body.len())));
    }
    if !body.bytes().all(|b| (0x20..0x7f).contains(&b)) {
        return Err(CodecError::InvalidBody("non-printable or non-ASCII character".into()));
    }
    Ok(())
}

/// Structured form of a message body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// `CFG <address>` — point the socket's notifications at a destination.
    Config { destination: Address },
    /// `ON <socket_id>` or `ON <socket_id> @<iso8601>` — the socket saw an
    /// appliance switch on. The optional timestamp carries the event time
    /// in-band; without it the envelope's receipt time is the event time.
    Notification {
        socket: SocketId,
        at_override: Option<Timestamp>,
    },
}

/// Parse a message body. Total over the grammar: every valid body yields a
/// [`Message`], everything else yields exactly one typed error naming the
/// offending token. Tokens are separated by exactly one space, so doubled
/// spaces make the following token malformed.
pub fn parse(body: &str) -> Result<Message, CodecError> {
    let (keyword, rest) = match body.split_once(' ') {
        Some((k, r)) => (k, Some(r)),
        None => (body, None),
    };
    match keyword {
        "CFG" => {
            let token = rest.unwrap_or("");
            let destination = Address::new(token)
                .map_err(|_| CodecError::MalformedAddress(token.to_string()))?;
            Ok(Message::Config { destination })
        }
        "ON" => {
            let rest = rest.unwrap_or("");
            let (id_token, ts_token) = match rest.split_once(' ') {
                Some((id, ts)) => (id, Some(ts)),
                None => (rest, None),
            };
            let socket = SocketId::new(id_token)
                .map_err(|_| CodecError::MalformedSocketId(id_token.to_string()))?;
            let at_override = match ts_token {
                None => None,
                Some(t) => {
                    let iso = t
                        .strip_prefix('@')
                        .ok_or_else(|| CodecError::MalformedTimestamp(t.to_string()))?;
                    Some(
                        Timestamp::parse_iso(iso)
                            .map_err(|_| CodecError::MalformedTimestamp(t.to_string()))?,
                    )
                }
            };
            Ok(Message::Notification { socket, at_override })
        }
        other => Err(CodecError::UnknownKeyword(other.to_string())),
    }
}

/// Canonical grammar form; `parse(serialize(m)) == m` for every valid `m`.
pub fn serialize(msg: &Message) -> String {
    match msg {
        Message::Config { destination } => format!("CFG {destination}"),
        Message::Notification { socket, at_override: None } => format!("ON {socket}"),
        Message::Notification { socket, at_override: Some(at) } => {
            format!("ON {socket} @{at}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse_iso(s).unwrap()
    }

    #[test]
    fn parse_config() {
        assert_eq!(
            parse("CFG +37126123456").unwrap(),
            Message::Config { destination: Address::new("+37126123456").unwrap() }
        );
    }

    #[test]
    fn parse_notification_bare() {
        assert_eq!(
            parse("ON S001").unwrap(),
            Message::Notification { socket: SocketId::new("S001").unwrap(), at_override: None }
        );
    }

    #[test]
    fn parse_notification_with_override() {
        assert_eq!(
            parse("ON S001 @2015-02-10T10:30:00").unwrap(),
            Message::Notification {
                socket: SocketId::new("S001").unwrap(),
                at_override: Some(ts("2015-02-10T10:30:00")),
            }
        );
    }

    #[test]
    fn parse_rejects_unknown_keyword() {
        assert_eq!(parse("PING"), Err(CodecError::UnknownKeyword("PING".into())));
        assert_eq!(parse(""), Err(CodecError::UnknownKeyword("".into())));
        assert_eq!(parse("on S001"), Err(CodecError::UnknownKeyword("on".into())));
    }

    #[test]
    fn parse_names_offending_token() {
        assert_eq!(parse("CFG"), Err(CodecError::MalformedAddress("".into())));
        assert_eq!(parse("CFG nope"), Err(CodecError::MalformedAddress("nope".into())));
        assert_eq!(
            parse("CFG +123 extra"),
            Err(CodecError::MalformedAddress("+123 extra".into()))
        );
        assert_eq!(parse("ON"), Err(CodecError::MalformedSocketId("".into())));
        assert_eq!(parse("ON bad.id"), Err(CodecError::MalformedSocketId("bad.id".into())));
        assert_eq!(
            parse("ON S001 2015-02-10T10:30:00"),
            Err(CodecError::MalformedTimestamp("2015-02-10T10:30:00".into()))
        );
        assert_eq!(
            parse("ON S001 @2015-02-10"),
            Err(CodecError::MalformedTimestamp("@2015-02-10".into()))
        );
        assert_eq!(
            parse("ON S001 @2015-02-10T10:30:00 junk"),
            Err(CodecError::MalformedTimestamp("@2015-02-10T10:30:00 junk".into()))
        );
    }

    #[test]
    fn doubled_space_is_malformed() {
        assert_eq!(parse("CFG  +37126123456"), Err(CodecError::MalformedAddress(" +37126123456".into())));
        assert_eq!(parse("ON  S001"), Err(CodecError::MalformedSocketId("".into())));
    }

    #[test]
    fn serialize_canonical_forms() {
        assert_eq!(
            serialize(&Message::Config { destination: Address::new("+37126123456").unwrap() }),
            "CFG +37126123456"
        );
        assert_eq!(
            serialize(&Message::Notification {
                socket: SocketId::new("S001").unwrap(),
                at_override: None
            }),
            "ON S001"
        );
        assert_eq!(
            serialize(&Message::Notification {
                socket: SocketId::new("S7").unwrap(),
                at_override: Some(ts("2020-01-01T00:00:00")),
            }),
            "ON S7 @2020-01-01T00:00:00"
        );
    }

    #[test]
    fn envelope_body_validation() {
        let sender = Address::new("sim:S001").unwrap();
        let at = ts("2020-01-01T00:00:00");
        assert!(Envelope::new(sender.clone(), at, "ON S001").is_ok());
        assert!(Envelope::new(sender.clone(), at, "x".repeat(161)).is_err());
        assert!(Envelope::new(sender.clone(), at, "two\nlines").is_err());
        assert!(Envelope::new(sender, at, "émoji").is_err());
    }

    #[test]
    fn frame_roundtrip() {
        let env = Envelope::new(
            Address::new("sim:S001").unwrap(),
            ts("2015-02-10T10:30:05"),
            "ON S001 @2015-02-10T10:30:00",
        )
        .unwrap();
        assert_eq!(env.to_frame(), "2015-02-10T10:30:05\tsim:S001\tON S001 @2015-02-10T10:30:00");
        assert_eq!(Envelope::parse_frame(&env.to_frame()).unwrap(), env);
    }

    #[test]
    fn frame_rejects_garbage() {
        assert!(Envelope::parse_frame("no tabs here").is_err());
        assert!(Envelope::parse_frame("2015-02-10T10:30:05\tsim:S001").is_err());
        assert!(Envelope::parse_frame("yesterday\tsim:S001\tON S001").is_err());
        assert!(Envelope::parse_frame("2015-02-10T10:30:05\tnot an addr\tON S001").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_socket_id()(s in "[A-Za-z0-9_-]{1,16}") -> SocketId {
                SocketId::new(s).unwrap()
            }
        }

        fn arb_address() -> impl Strategy<Value = Address> {
            prop_oneof![
                "\\+[0-9]{7,15}".prop_map(|s| Address::new(s).unwrap()),
                "[a-z][a-z0-9]{0,7}:[!-~]{1,20}".prop_map(|s| Address::new(s).unwrap()),
            ]
        }

        fn arb_timestamp() -> impl Strategy<Value = Timestamp> {
            (0i64..4_000_000_000).prop_map(|secs| {
                Timestamp::parse_iso("1970-01-01T00:00:00").unwrap().plus_seconds(secs)
            })
        }

        fn arb_message() -> impl Strategy<Value = Message> {
            prop_oneof![
                arb_address().prop_map(|destination| Message::Config { destination }),
                (arb_socket_id(), prop::option::of(arb_timestamp()))
                    .prop_map(|(socket, at_override)| Message::Notification { socket, at_override }),
            ]
        }

        proptest! {
            #[test]
            fn roundtrip(msg in arb_message()) {
                let body = serialize(&msg);
                prop_assert_eq!(parse(&body).unwrap(), msg);
            }

            #[test]
            fn serialized_fits_sms(msg in arb_message()) {
                prop_assert!(serialize(&msg).len() <= MAX_BODY_LEN);
            }

            // Any single-line ASCII junk gets a typed error, never a panic.
            #[test]
            fn rejection_totality(body in "[ -~]{0,80}") {
                let _ = parse(&body);
            }
        }
    }
}
