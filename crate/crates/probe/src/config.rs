use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::time::Duration;

use quicaudit_core::InitialSize;
use serde::{Deserialize, Serialize};

use crate::ProbeError;

/// IPv4 plus UDP header bytes subtracted from the MTU.
pub const IP_UDP_OVERHEAD: u16 = 28;
pub const DEFAULT_MTU: u16 = 1500;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_WINDOW: Duration = Duration::from_secs(60);
/// Idle time after the last server datagram before the client acknowledges
/// an incomplete flight.
pub const ACK_DELAY_US: u64 = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    #[default]
    Complete,
    NoAck,
}

impl FromStr for ProbeMode {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "complete" => Ok(ProbeMode::Complete),
            "no-ack" | "noack" => Ok(ProbeMode::NoAck),
            other => Err(ProbeError::Config(format!("unknown probe mode {other:?}"))),
        }
    }
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeMode::Complete => "complete",
            ProbeMode::NoAck => "no-ack",
        })
    }
}

/// Which wire the client speaks: real QUIC v1 or the plaintext mock layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Quic,
    Mock,
}

impl FromStr for TransportKind {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quic" => Ok(TransportKind::Quic),
            "mock" => Ok(TransportKind::Mock),
            other => Err(ProbeError::Config(format!("unknown transport {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Server name for SNI and records.
    pub host: String,
    pub addr: SocketAddr,
    pub initial_size: InitialSize,
    pub mode: ProbeMode,
    pub timeout: Duration,
    pub observation_window: Duration,
    pub alpn: String,
    pub retry_enabled: bool,
    pub transport: TransportKind,
    pub mtu: u16,
}

impl ProbeConfig {
    pub fn new(host: impl Into<String>, addr: SocketAddr, initial_size: InitialSize) -> Self {
        ProbeConfig {
            host: host.into(),
            addr,
            initial_size,
            mode: ProbeMode::Complete,
            timeout: DEFAULT_TIMEOUT,
            observation_window: DEFAULT_WINDOW,
            alpn: "h3".into(),
            retry_enabled: true,
            transport: TransportKind::Quic,
            mtu: DEFAULT_MTU,
        }
    }

    pub fn mode(mut self, mode: ProbeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn transport(mut self, transport: TransportKind) -> Self {
        self.transport = transport;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn window(mut self, window: Duration) -> Self {
        self.observation_window = window;
        self
    }

    pub fn initial_size(mut self, size: InitialSize) -> Self {
        self.initial_size = size;
        self
    }

    pub fn initial_cap(&self) -> u32 {
        u32::from(self.mtu.saturating_sub(IP_UDP_OVERHEAD))
    }

    /// How long the probe runs before it is cut off.
    pub fn deadline(&self) -> Duration {
        match self.mode {
            ProbeMode::Complete => self.timeout,
            ProbeMode::NoAck => self.observation_window,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.initial_size.get() > self.initial_cap() {
            return Err(ProbeError::Config(format!(
                "Initial size {} exceeds the {} byte cap of a {} byte MTU",
                self.initial_size.get(),
                self.initial_cap(),
                self.mtu
            )));
        }
        if self.deadline().is_zero() {
            return Err(ProbeError::Config("timeout and observation window must be positive".into()));
        }
        Ok(())
    }
}
