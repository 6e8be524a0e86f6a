use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::Algorithm;

/// Anti-amplification rules as they evolved through the QUIC drafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[derive(Default)]
pub enum LimitPolicy {
    /// At most three Handshake packets before validation (drafts 10 to 12).
    HandshakePackets3,
    /// At most three datagrams before validation (drafts 13 and 14).
    Datagrams3,
    /// At most three times the bytes received (drafts 15 to 32).
    Bytes3x,
    /// At most three times the data received (drafts 33, 34 and RFC 9000).
    #[default]
    Data3xRfc9000,
}

impl LimitPolicy {
    pub const ALL: [LimitPolicy; 4] =
        [Self::HandshakePackets3, Self::Datagrams3, Self::Bytes3x, Self::Data3xRfc9000];

    pub fn source_label(self) -> &'static str {
        match self {
            Self::HandshakePackets3 => "draft-ietf-quic-transport-10..12",
            Self::Datagrams3 => "draft-ietf-quic-transport-13..14",
            Self::Bytes3x => "draft-ietf-quic-transport-15..32",
            Self::Data3xRfc9000 => "draft-ietf-quic-transport-33..34, RFC 9000",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HandshakePackets3 => "HANDSHAKE_PACKETS_3",
            Self::Datagrams3 => "DATAGRAMS_3",
            Self::Bytes3x => "BYTES_3X",
            Self::Data3xRfc9000 => "DATA_3X_RFC9000",
        }
    }
}


impl fmt::Display for LimitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LimitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .or(match norm.as_str() {
                "RFC9000" | "RFC_9000" => Some(Self::Data3xRfc9000),
                _ => None,
            })
            .ok_or_else(|| format!("unknown limit policy {s:?}"))
    }
}

/// Initial size and certificate compression support of a browser family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BrowserProfile {
    pub name: &'static str,
    pub initial_size: u16,
    pub compression_algorithms: &'static [Algorithm],
}

pub const FIREFOX: BrowserProfile =
    BrowserProfile { name: "Firefox", initial_size: 1357, compression_algorithms: &[] };

pub const CHROMIUM: BrowserProfile =
    BrowserProfile { name: "Chromium", initial_size: 1250, compression_algorithms: &[Algorithm::Brotli] };

impl BrowserProfile {
    pub const ALL: [BrowserProfile; 2] = [FIREFOX, CHROMIUM];

    pub fn by_name(name: &str) -> Option<BrowserProfile> {
        Self::ALL.into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn budget(&self) -> u64 {
        3 * u64::from(self.initial_size)
    }
}
