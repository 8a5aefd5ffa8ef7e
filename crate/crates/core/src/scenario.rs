//! Line-based scenario files driving the simulator:
//!
//! ```text
//! <iso8601> SAMPLE <socket_id> <amps>
//! <iso8601> SMS_TO_SOCKET <socket_id> <body>
//! <iso8601> EVENT <socket_id>
//! ```
//!
//! Lines must be sorted by timestamp; `#` comments and blank lines are
//! ignored. `EVENT` injects a switch-on directly, bypassing current
//! simulation.

use std::path::Path;

use thiserror::Error;

use crate::model::{SocketId, Timestamp};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// What one scenario line asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    /// Feed a current reading to the socket's detector.
    Sample { socket: SocketId, amps: f64 },
    /// Deliver an SMS body to the socket (configuration path).
    SmsToSocket { socket: SocketId, body: String },
    /// Inject a switch-on event directly.
    Event { socket: SocketId },
}

/// One timestamped step of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStep {
    pub at: Timestamp,
    pub directive: Directive,
    /// 1-based source line, for diagnostics.
    pub line: usize,
}

/// Parse a scenario from text. Errors cite the offending line number.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioStep>, ScenarioError> {
    let mut steps = Vec::new();
    let mut last_at: Option<Timestamp> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| ScenarioError::Parse { line: line_no, reason };

        let mut fields = line.splitn(3, ' ');
        let ts_token = fields.next().unwrap_or("");
        let op_token = fields.next().unwrap_or("");
        let rest = fields.next().unwrap_or("");

        let at = Timestamp::parse_iso(ts_token)
            .map_err(|_| err(format!("bad timestamp `{ts_token}`")))?;
        if let Some(last) = last_at {
            if at < last {
                return Err(err(format!("timestamp {at} not sorted (previous {last})")));
            }
        }
        last_at = Some(at);

        let directive = match op_token {
            "SAMPLE" => {
                let (id_token, amps_token) = rest
                    .split_once(' ')
                    .ok_or_else(|| err("SAMPLE needs `<socket_id> <amps>`".into()))?;
                let socket = SocketId::new(id_token)
                    .map_err(|_| err(format!("bad socket id `{id_token}`")))?;
                let amps: f64 = amps_token
                    .parse()
                    .map_err(|_| err(format!("bad current `{amps_token}`")))?;
                if !(amps.is_finite() && amps >= 0.0) {
                    return Err(err(format!("bad current `{amps_token}`")));
                }
                Directive::Sample { socket, amps }
            }
            "SMS_TO_SOCKET" => {
                let (id_token, body) = rest
                    .split_once(' ')
                    .ok_or_else(|| err("SMS_TO_SOCKET needs `<socket_id> <body>`".into()))?;
                let socket = SocketId::new(id_token)
                    .map_err(|_| err(format!("bad socket id `{id_token}`")))?;
                Directive::SmsToSocket { socket, body: body.to_string() }
            }
            "EVENT" => {
                if rest.is_empty() {
                    return Err(err("EVENT needs `<socket_id>`".into()));
                }
                if rest.contains(' ') {
                    return Err(err(format!("unexpected trailing input `{rest}`")));
                }
                let socket =
                    SocketId::new(rest).map_err(|_| err(format!("bad socket id `{rest}`")))?;
                Directive::Event { socket }
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        };
        steps.push(ScenarioStep { at, directive, line: line_no });
    }
    Ok(steps)
}

/// Parse a scenario file from disk.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Vec<ScenarioStep>, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_directive_kinds() {
        let text = "\
# morning routine
2015-02-10T10:29:00 SMS_TO_SOCKET S001 CFG +10000000000

2015-02-10T10:30:00 SAMPLE S001 0.5
2015-02-10T10:30:05 SAMPLE S001 0.5
2015-02-11T10:30:00 EVENT S001
";
        let steps = parse_scenario(text).unwrap();
        assert_eq!(steps.len(), 4);
        assert_eq!(
            steps[0].directive,
            Directive::SmsToSocket {
                socket: SocketId::new("S001").unwrap(),
                body: "CFG +10000000000".into()
            }
        );
        assert_eq!(
            steps[1].directive,
            Directive::Sample { socket: SocketId::new("S001").unwrap(), amps: 0.5 }
        );
        assert_eq!(steps[3].directive, Directive::Event { socket: SocketId::new("S001").unwrap() });
        assert_eq!(steps[3].line, 6);
    }

    #[test]
    fn unsorted_lines_rejected_with_line_number() {
        let text = "\
2015-02-10T10:30:00 SAMPLE S001 0.5
2015-02-10T10:29:00 SAMPLE S001 0.5
";
        match parse_scenario(text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let text = "\
2015-02-10T10:30:00 SAMPLE S001 0.5
# fine
2015-02-10T10:31:00 SAMPLE S001 lots
";
        match parse_scenario(text) {
            Err(ScenarioError::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("lots"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_directive_rejected() {
        let text = "2015-02-10T10:30:00 POWER_OFF S001\n";
        assert!(matches!(parse_scenario(text), Err(ScenarioError::Parse { line: 1, .. })));
    }

    #[test]
    fn negative_current_rejected() {
        let text = "2015-02-10T10:30:00 SAMPLE S001 -1.0\n";
        assert!(parse_scenario(text).is_err());
    }

    #[test]
    fn sms_body_keeps_spaces() {
        let text = "2015-02-10T10:30:00 SMS_TO_SOCKET S001 ON S001 @2015-02-10T10:00:00\n";
        let steps = parse_scenario(text).unwrap();
        assert_eq!(
            steps[0].directive,
            Directive::SmsToSocket {
                socket: SocketId::new("S001").unwrap(),
                body: "ON S001 @2015-02-10T10:00:00".into()
            }
        );
    }

    #[test]
    fn equal_timestamps_allowed() {
        let text = "\
2015-02-10T10:30:00 SAMPLE S001 0.5
2015-02-10T10:30:00 SAMPLE S002 0.5
";
        assert_eq!(parse_scenario(text).unwrap().len(), 2);
    }
}
