//! Server behavior descriptions, presets and the conformance grid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use quicaudit_core::{HandshakeClass, InitialSize, PacketKind, DEFAULT_INITIAL_CAP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{header_len, CRYPTO_HEADER_LEN};

pub const SERVER_HELLO_LEN: usize = 90;
pub const ACK_FRAME_LEN: usize = 5;
/// Smallest Handshake packet the server emits: header, CRYPTO header, one byte.
pub const MIN_HANDSHAKE_PACKET: usize = 27 + CRYPTO_HEADER_LEN + 1;
pub const DEFAULT_MAX_DATAGRAM: u32 = 1252;
pub const DEFAULT_HANDSHAKE_OVERHEAD: u32 = 1100;
pub const RESEND_BASE_US: u64 = 500_000;
const MAX_DATAGRAM_LIMIT: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid behavior: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetryMode {
    #[default]
    Never,
    Always,
}

/// What the server does while the client stays silent after its Initial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResendPolicy {
    #[default]
    None,
    #[serde(rename = "CAPPED_3X")]
    Capped3x,
    /// Keep retransmitting until this many bytes were sent in total.
    Uncapped(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSpec {
    #[serde(default = "custom_name")]
    pub name: String,
    pub coalesce: bool,
    #[serde(default)]
    pub superfluous_padding: u32,
    #[serde(default)]
    pub retry: RetryMode,
    pub chain_len: u32,
    #[serde(default)]
    pub resend_policy: ResendPolicy,
    #[serde(default)]
    pub stall_at_limit: bool,
    #[serde(default)]
    pub encapsulation_overhead: u32,
    /// TLS bytes other than the certificate chain, plus QUIC framing.
    #[serde(default = "default_overhead")]
    pub handshake_overhead: u32,
    #[serde(default = "default_max_datagram")]
    pub max_datagram: u32,
    /// Largest UDP payload the simulated path delivers.
    #[serde(default = "default_path_payload")]
    pub path_payload: u32,
}

fn custom_name() -> String {
    "custom".into()
}

fn default_overhead() -> u32 {
    DEFAULT_HANDSHAKE_OVERHEAD
}

fn default_max_datagram() -> u32 {
    DEFAULT_MAX_DATAGRAM
}

fn default_path_payload() -> u32 {
    u32::from(DEFAULT_INITIAL_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Compliant,
    Cloudflare,
    Meta,
    Capped,
    Retry,
    Stall,
    Tunnel,
}

impl Preset {
    pub const ALL: [Preset; 7] =
        [Preset::Compliant, Preset::Cloudflare, Preset::Meta, Preset::Capped, Preset::Retry, Preset::Stall, Preset::Tunnel];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Compliant => "compliant",
            Preset::Cloudflare => "cloudflare",
            Preset::Meta => "meta",
            Preset::Capped => "capped",
            Preset::Retry => "retry",
            Preset::Stall => "stall",
            Preset::Tunnel => "tunnel",
        }
    }

    pub fn spec(self) -> BehaviorSpec {
        let base = BehaviorSpec::new(self.as_str(), 2329);
        match self {
            Preset::Compliant => BehaviorSpec { stall_at_limit: true, ..base },
            Preset::Cloudflare => BehaviorSpec { coalesce: false, superfluous_padding: 2462, ..base },
            Preset::Meta => BehaviorSpec { chain_len: 5900, resend_policy: ResendPolicy::Uncapped(35_056), ..base },
            Preset::Capped => {
                BehaviorSpec { chain_len: 5900, resend_policy: ResendPolicy::Capped3x, stall_at_limit: true, ..base }
            }
            Preset::Retry => BehaviorSpec { retry: RetryMode::Always, stall_at_limit: true, ..base },
            Preset::Stall => BehaviorSpec { chain_len: 5000, handshake_overhead: 0, stall_at_limit: true, ..base },
            Preset::Tunnel => BehaviorSpec { encapsulation_overhead: 80, stall_at_limit: true, ..base },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s || s.strip_suffix("-like") == Some(p.as_str()))
            .ok_or(SpecError::UnknownPreset(s))
    }
}

/// Outcome a COMPLETE-mode probe should observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Expectation {
    Class(HandshakeClass),
    Unreachable,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::Class(c) => c.fmt(f),
            Expectation::Unreachable => f.write_str("UNREACHABLE"),
        }
    }
}

impl BehaviorSpec {
    /// Coalescing, no padding, no Retry, no resends, standard framing.
    pub fn new(name: impl Into<String>, chain_len: u32) -> Self {
        BehaviorSpec {
            name: name.into(),
            coalesce: true,
            superfluous_padding: 0,
            retry: RetryMode::Never,
            chain_len,
            resend_policy: ResendPolicy::None,
            stall_at_limit: false,
            encapsulation_overhead: 0,
            handshake_overhead: DEFAULT_HANDSHAKE_OVERHEAD,
            max_datagram: DEFAULT_MAX_DATAGRAM,
            path_payload: default_path_payload(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        let spec: BehaviorSpec = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        if !(200..=MAX_DATAGRAM_LIMIT).contains(&self.max_datagram) {
            return bad(format!("max_datagram {} outside 200..={MAX_DATAGRAM_LIMIT}", self.max_datagram));
        }
        if self.resend_policy == ResendPolicy::Uncapped(0) {
            return bad("UNCAPPED total must be positive".into());
        }
        let core = u64::from(self.chain_len) + u64::from(self.handshake_overhead);
        let min = (self.initial_packet_core_len() + MIN_HANDSHAKE_PACKET) as u64;
        if core < min {
            return bad(format!("chain_len + handshake_overhead = {core} is below the {min} byte minimum flight"));
        }
        if core > 1 << 24 {
            return bad(format!("flight of {core} bytes is too large"));
        }
        Ok(())
    }

    /// Server Initial packet carrying the ServerHello, excluding padding.
    pub(crate) fn initial_packet_core_len(&self) -> usize {
        let ack = if self.coalesce { ACK_FRAME_LEN } else { 0 };
        header_len(PacketKind::Initial, 0) + ack + CRYPTO_HEADER_LEN + SERVER_HELLO_LEN
    }

    /// Size of the standalone ACK packet a non-coalescing server sends first.
    pub fn ack_only_packet_len() -> usize {
        header_len(PacketKind::Initial, 0) + ACK_FRAME_LEN
    }

    /// UDP bytes of the complete first server flight.
    pub fn flight_bytes(&self) -> u64 {
        let separate_ack = if self.coalesce { 0 } else { Self::ack_only_packet_len() as u64 };
        u64::from(self.chain_len) + u64::from(self.handshake_overhead) + u64::from(self.superfluous_padding) + separate_ack
    }

    pub fn drops(&self, datagram_len: usize) -> bool {
        datagram_len as u64 + u64::from(self.encapsulation_overhead) > u64::from(self.path_payload)
    }

    /// Whether the server withholds data beyond three times the client bytes.
    pub fn enforces_limit(&self) -> bool {
        self.stall_at_limit || self.resend_policy == ResendPolicy::Capped3x
    }

    pub fn expected(&self, initial: InitialSize) -> Expectation {
        if self.drops(initial.get() as usize) {
            return Expectation::Unreachable;
        }
        if self.retry == RetryMode::Always {
            return Expectation::Class(HandshakeClass::Retry);
        }
        let class = match (self.flight_bytes() > initial.budget(), self.enforces_limit()) {
            (false, _) => HandshakeClass::OneRtt,
            (true, true) => HandshakeClass::MultiRtt,
            (true, false) => HandshakeClass::Amplification,
        };
        Expectation::Class(class)
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub spec: BehaviorSpec,
    pub expected: Vec<(InitialSize, Expectation)>,
}

pub fn grid_sizes() -> Vec<InitialSize> {
    InitialSize::grid(1200, u32::from(DEFAULT_INITIAL_CAP), 10).expect("constant grid")
}

/// Canonical conformance matrix over Initial sizes 1200..=1472 step 10.
pub fn behavior_grid() -> Vec<GridRow> {
    let mut specs = vec![
        Preset::Compliant.spec().named("compliant-small"),
        Preset::Cloudflare.spec().named("cloudflare-like"),
        Preset::Meta.spec().named("meta-like"),
        Preset::Capped.spec().named("capped"),
        Preset::Retry.spec().named("retry-always"),
        BehaviorSpec { chain_len: 3900, ..Preset::Stall.spec() }.named("stall-on-large-cert(3900)"),
        BehaviorSpec { chain_len: 5000, ..Preset::Stall.spec() }.named("stall-on-large-cert(5000)"),
        Preset::Tunnel.spec().named("tunnel(80)"),
    ];
    specs.push(BehaviorSpec { coalesce: false, ..Preset::Compliant.spec() }.named("compliant-uncoalesced"));
    let sizes = grid_sizes();
    specs
        .into_iter()
        .map(|spec| GridRow { expected: sizes.iter().map(|&s| (s, spec.expected(s))).collect(), spec })
        .collect()
}
