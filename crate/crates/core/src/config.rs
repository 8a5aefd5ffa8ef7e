//! Service configuration: flat `key=value` text, `#` comments allowed.
//!
//! ```text
//! server_address=+10000000000
//! bin_size_minutes=60
//! pattern_days=3
//! grace_minutes=15
//! log_path=events.log
//! dead_letter_path=dead_letter.log
//! outbox_dir=outbox
//! input=frames.txt            # or listen=127.0.0.1:7001
//! route.phone=sms             # routing table overrides
//! recipient.S001=+20000000000 # alarm recipients, per socket
//! recipient.default=+20000000000
//! socket.S001.i_on_amps=0.25  # detector overrides, per socket
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{Address, SocketId};
use crate::pattern::EngineParams;
use crate::socket::DetectorParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("config: {0}")]
    Invalid(String),
}

/// Everything the gateway service needs to run.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// SMS destination that selects middleware mode on a socket.
    pub server_address: Address,
    pub engine: EngineParams,
    /// Detector defaults for simulated sockets.
    pub detector: DetectorParams,
    /// Per-socket detector overrides.
    pub detector_overrides: HashMap<SocketId, DetectorParams>,
    /// Scheme (or `phone`) → transport name.
    pub routes: HashMap<String, String>,
    /// Alarm recipient per socket.
    pub recipients: HashMap<SocketId, Address>,
    /// Fallback alarm recipient.
    pub default_recipient: Option<Address>,
    pub log_path: PathBuf,
    pub dead_letter_path: PathBuf,
    pub outbox_dir: PathBuf,
    /// Serve from a TCP endpoint...
    pub listen: Option<String>,
    /// ...or from a frame file (logical clock).
    pub input: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut server_address = None;
        let mut bin_size_minutes = 60u32;
        let mut pattern_days = 3u32;
        let mut grace_minutes = 15u32;
        let mut reorder_tolerance_seconds = 0u64;
        let mut detector = DetectorParams::default();
        let mut override_amps: HashMap<SocketId, f64> = HashMap::new();
        let mut override_debounce: HashMap<SocketId, u64> = HashMap::new();
        let mut routes = HashMap::new();
        let mut recipients = HashMap::new();
        let mut default_recipient = None;
        let mut log_path = PathBuf::from("events.log");
        let mut dead_letter_path = PathBuf::from("dead_letter.log");
        let mut outbox_dir = PathBuf::from("outbox");
        let mut listen = None;
        let mut input = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |reason: String| ConfigError::Parse { line: line_no, reason };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "server_address" => {
                    server_address =
                        Some(Address::new(value).map_err(|e| err(e.to_string()))?);
                }
                "bin_size_minutes" => {
                    bin_size_minutes = value.parse().map_err(|_| err(format!("bad integer `{value}`")))?;
                }
                "pattern_days" => {
                    pattern_days = value.parse().map_err(|_| err(format!("bad integer `{value}`")))?;
                }
                "grace_minutes" => {
                    grace_minutes = value.parse().map_err(|_| err(format!("bad integer `{value}`")))?;
                }
                "reorder_tolerance_seconds" => {
                    reorder_tolerance_seconds =
                        value.parse().map_err(|_| err(format!("bad integer `{value}`")))?;
                }
                "i_on_amps" => {
                    detector.i_on_amps = parse_amps(value).map_err(err)?;
                }
                "debounce_seconds" => {
                    detector.debounce_seconds =
                        value.parse().map_err(|_| err(format!("bad integer `{value}`")))?;
                }
                "log_path" => log_path = PathBuf::from(value),
                "dead_letter_path" => dead_letter_path = PathBuf::from(value),
                "outbox_dir" => outbox_dir = PathBuf::from(value),
                "listen" => listen = Some(value.to_string()),
                "input" => input = Some(PathBuf::from(value)),
                _ => {
                    if let Some(scheme) = key.strip_prefix("route.") {
                        routes.insert(scheme.to_string(), value.to_string());
                    } else if let Some(rest) = key.strip_prefix("recipient.") {
                        let address = Address::new(value).map_err(|e| err(e.to_string()))?;
                        if rest == "default" {
                            default_recipient = Some(address);
                        } else {
                            let socket = SocketId::new(rest).map_err(|e| err(e.to_string()))?;
                            recipients.insert(socket, address);
                        }
                    } else if let Some(rest) = key.strip_prefix("socket.") {
                        let (id, field) = rest
                            .rsplit_once('.')
                            .ok_or_else(|| err(format!("bad socket override key `{key}`")))?;
                        let socket = SocketId::new(id).map_err(|e| err(e.to_string()))?;
                        match field {
                            "i_on_amps" => {
                                override_amps.insert(socket, parse_amps(value).map_err(err)?);
                            }
                            "debounce_seconds" => {
                                let d = value
                                    .parse()
                                    .map_err(|_| err(format!("bad integer `{value}`")))?;
                                override_debounce.insert(socket, d);
                            }
                            _ => return Err(err(format!("unknown socket field `{field}`"))),
                        }
                    } else {
                        return Err(err(format!("unknown key `{key}`")));
                    }
                }
            }
        }

        let server_address = server_address
            .ok_or_else(|| ConfigError::Invalid("server_address is required".into()))?;
        let mut engine = EngineParams::new(bin_size_minutes, pattern_days, grace_minutes)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        engine.reorder_tolerance_seconds = reorder_tolerance_seconds;
        if listen.is_some() && input.is_some() {
            return Err(ConfigError::Invalid("set either listen or input, not both".into()));
        }

        // Overrides inherit the global defaults for fields they leave unset,
        // regardless of key order in the file.
        let mut detector_overrides: HashMap<SocketId, DetectorParams> = HashMap::new();
        for (socket, amps) in override_amps {
            detector_overrides.entry(socket).or_insert(detector).i_on_amps = amps;
        }
        for (socket, debounce) in override_debounce {
            detector_overrides.entry(socket).or_insert(detector).debounce_seconds = debounce;
        }

        Ok(ServiceConfig {
            server_address,
            engine,
            detector,
            detector_overrides,
            routes,
            recipients,
            default_recipient,
            log_path,
            dead_letter_path,
            outbox_dir,
            listen,
            input,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Detector parameters for one socket.
    pub fn detector_for(&self, socket: &SocketId) -> DetectorParams {
        self.detector_overrides.get(socket).copied().unwrap_or(self.detector)
    }

    /// Alarm recipient for one socket, falling back to the default.
    pub fn recipient_for(&self, socket: &SocketId) -> Option<&Address> {
        self.recipients.get(socket).or(self.default_recipient.as_ref())
    }

    /// Resolve paths relative to a base directory (configs ship relative
    /// paths; commands anchor them at the working directory).
    pub fn anchored_at(mut self, base: &Path) -> Self {
        let anchor = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        self.log_path = anchor(self.log_path);
        self.dead_letter_path = anchor(self.dead_letter_path);
        self.outbox_dir = anchor(self.outbox_dir);
        self.input = self.input.map(anchor);
        self
    }
}

fn parse_amps(value: &str) -> Result<f64, String> {
    let amps: f64 = value.parse().map_err(|_| format!("bad current `{value}`"))?;
    if amps.is_finite() && amps > 0.0 {
        Ok(amps)
    } else {
        Err(format!("threshold current must be positive, got `{value}`"))
    }
}
