//! Handshake traces as observed by a probing client.
//!
//! A [`HandshakeTrace`] is the ordered list of UDP datagrams exchanged during
//! one handshake attempt, each annotated with the QUIC packets (and, when the
//! transport exposes them, the frames) it carried. Traces are validated once
//! at construction and immutable afterwards.

mod analysis;
pub mod jsonl;
mod policy;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{
    amplification_factor, classify_handshake, coalescence_report, limit_check,
    payload_decomposition, pre_validation_bytes, validation_point, AnalysisError,
    ClassificationResult, CoalescenceReport, HandshakeClass, LimitVerdict, PayloadBreakdown,
};
pub use policy::{BrowserProfile, LimitPolicy, CHROMIUM, FIREFOX};

/// Largest UDP payload an IPv4 datagram can carry.
pub const MAX_UDP_PAYLOAD: u32 = 65_527;
/// Smallest client Initial datagram a server may accept.
pub const MIN_INITIAL_SIZE: u16 = 1200;
/// Client Initial ceiling for a 1500 byte Ethernet MTU (minus IPv4 and UDP headers).
pub const DEFAULT_INITIAL_CAP: u16 = 1472;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c2s")]
    ClientToServer,
    #[serde(rename = "s2c")]
    ServerToClient,
}

impl Direction {
    pub fn is_server(self) -> bool {
        self == Direction::ServerToClient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Initial,
    Handshake,
    Retry,
    OneRtt,
    VersionNegotiation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Crypto,
    Ack,
    Padding,
    Other,
}

/// One frame as seen on the wire. `payload_len` is the full frame encoding;
/// `crypto_tls_len` the TLS bytes carried by a CRYPTO frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub kind: FrameKind,
    #[serde(rename = "len")]
    pub payload_len: u32,
    #[serde(rename = "tls", default, skip_serializing_if = "is_zero")]
    pub crypto_tls_len: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl FrameSummary {
    pub fn crypto(payload_len: u32, tls_len: u32) -> Self {
        Self { kind: FrameKind::Crypto, payload_len, crypto_tls_len: tls_len }
    }

    pub fn ack(payload_len: u32) -> Self {
        Self { kind: FrameKind::Ack, payload_len, crypto_tls_len: 0 }
    }

    pub fn padding(payload_len: u32) -> Self {
        Self { kind: FrameKind::Padding, payload_len, crypto_tls_len: 0 }
    }

    pub fn other(payload_len: u32) -> Self {
        Self { kind: FrameKind::Other, payload_len, crypto_tls_len: 0 }
    }
}

/// Connection ID bytes, serialized as hex.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConnectionId(#[serde(with = "hex::serde")] pub Vec<u8>);

impl From<&[u8]> for ConnectionId {
    fn from(v: &[u8]) -> Self {
        Self(v.to_vec())
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub kind: PacketKind,
    pub wire_len: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameSummary>,
    #[serde(default)]
    pub scid: ConnectionId,
    #[serde(default)]
    pub dcid: ConnectionId,
}

impl PacketRecord {
    pub fn new(kind: PacketKind, wire_len: u32) -> Self {
        Self { kind, wire_len, frames: Vec::new(), scid: ConnectionId::default(), dcid: ConnectionId::default() }
    }

    pub fn with_frames(mut self, frames: Vec<FrameSummary>) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_cids(mut self, scid: &[u8], dcid: &[u8]) -> Self {
        self.scid = scid.into();
        self.dcid = dcid.into();
        self
    }

    /// Packet bytes not covered by any frame: header, packet number, AEAD tag.
    pub fn header_bytes(&self) -> u32 {
        let framed: u32 = self.frames.iter().map(|f| f.payload_len).sum();
        self.wire_len.saturating_sub(framed)
    }

    pub fn has_frame(&self, kind: FrameKind) -> bool {
        self.frames.iter().any(|f| f.kind == kind)
    }
}

/// One UDP datagram. `trailing_padding` counts bytes after the last QUIC
/// packet (padding applied at the UDP layer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Datagram {
    pub direction: Direction,
    pub time_us: u64,
    #[serde(rename = "udp_len")]
    pub udp_payload_len: u32,
    #[serde(default)]
    pub trailing_padding: u32,
    pub packets: Vec<PacketRecord>,
}

impl Datagram {
    /// Builds a datagram whose length is derived from its packets.
    pub fn from_packets(direction: Direction, time_us: u64, packets: Vec<PacketRecord>, trailing_padding: u32) -> Self {
        let udp_payload_len = packets.iter().map(|p| p.wire_len).sum::<u32>() + trailing_padding;
        Self { direction, time_us, udp_payload_len, trailing_padding, packets }
    }

    pub fn is_server(&self) -> bool {
        self.direction.is_server()
    }

    pub fn has_packet(&self, kind: PacketKind) -> bool {
        self.packets.iter().any(|p| p.kind == kind)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        self.validate_at(0)
    }

    fn validate_at(&self, index: usize) -> Result<(), TraceError> {
        if self.udp_payload_len == 0 || self.udp_payload_len > MAX_UDP_PAYLOAD {
            return Err(TraceError::DatagramSize { index, len: self.udp_payload_len });
        }
        let packets: u64 = self.packets.iter().map(|p| u64::from(p.wire_len)).sum();
        if packets + u64::from(self.trailing_padding) != u64::from(self.udp_payload_len) {
            return Err(TraceError::LengthMismatch {
                index,
                udp_len: self.udp_payload_len,
                accounted: packets + u64::from(self.trailing_padding),
            });
        }
        for p in &self.packets {
            if p.wire_len == 0 {
                return Err(TraceError::EmptyPacket { index });
            }
            if p.kind == PacketKind::Retry && !p.frames.is_empty() {
                return Err(TraceError::RetryWithFrames { index });
            }
            let framed: u64 = p.frames.iter().map(|f| u64::from(f.payload_len)).sum();
            if framed > u64::from(p.wire_len) {
                return Err(TraceError::FramesExceedPacket { index });
            }
            for f in &p.frames {
                let ok = f.crypto_tls_len <= f.payload_len
                    && (f.kind == FrameKind::Crypto || f.crypto_tls_len == 0);
                if !ok {
                    return Err(TraceError::FrameInvariant { index });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Completed,
    TimedOut,
    Refused,
    Unreachable,
}

impl TraceOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceOutcome::Completed => "completed",
            TraceOutcome::TimedOut => "timed_out",
            TraceOutcome::Refused => "refused",
            TraceOutcome::Unreachable => "unreachable",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace has no datagrams")]
    Empty,
    #[error("first datagram must be a client datagram carrying an Initial packet")]
    FirstNotClientInitial,
    #[error("client_initial_size {declared} does not match first datagram length {actual}")]
    InitialSizeMismatch { declared: u32, actual: u32 },
    #[error("datagram {index}: UDP payload length {len} outside 1..=65527")]
    DatagramSize { index: usize, len: u32 },
    #[error("datagram {index}: udp_len {udp_len} != packets + trailing padding ({accounted})")]
    LengthMismatch { index: usize, udp_len: u32, accounted: u64 },
    #[error("datagram {index}: packet with zero wire length")]
    EmptyPacket { index: usize },
    #[error("datagram {index}: Retry packet carries frames")]
    RetryWithFrames { index: usize },
    #[error("datagram {index}: frames exceed packet length")]
    FramesExceedPacket { index: usize },
    #[error("datagram {index}: frame violates crypto/padding length rules")]
    FrameInvariant { index: usize },
    #[error("datagram {index}: timestamps go backwards")]
    TimeOrder { index: usize },
    #[error("initial size {0} outside the allowed range")]
    InitialSize(u32),
}

/// A client Initial size within `[1200, 65527]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct InitialSize(u16);

impl InitialSize {
    pub fn new(bytes: u32) -> Result<Self, TraceError> {
        if (u32::from(MIN_INITIAL_SIZE)..=MAX_UDP_PAYLOAD).contains(&bytes) {
            Ok(Self(bytes as u16))
        } else {
            Err(TraceError::InitialSize(bytes))
        }
    }

    pub fn get(self) -> u32 {
        u32::from(self.0)
    }

    /// Bytes a server may send before validating a client that sent only this Initial.
    pub fn budget(self) -> u64 {
        3 * u64::from(self.0)
    }

    /// The sweep grid `from..=to` in `step` byte increments.
    pub fn grid(from: u32, to: u32, step: u32) -> Result<Vec<InitialSize>, TraceError> {
        let step = step.max(1);
        (from..=to).step_by(step as usize).map(InitialSize::new).collect()
    }
}

impl TryFrom<u32> for InitialSize {
    type Error = TraceError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<InitialSize> for u32 {
    fn from(v: InitialSize) -> u32 {
        v.get()
    }
}

impl fmt::Display for InitialSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A validated handshake trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeTrace {
    target: Option<String>,
    datagrams: Vec<Datagram>,
    client_initial_size: u32,
    outcome: TraceOutcome,
    handshake_confirmed_us: Option<u64>,
    frames_visible: bool,
    stateless_reset: bool,
}

impl HandshakeTrace {
    pub fn builder(outcome: TraceOutcome) -> TraceBuilder {
        TraceBuilder { outcome, ..TraceBuilder::default() }
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn datagrams(&self) -> &[Datagram] {
        &self.datagrams
    }

    pub fn client_initial_size(&self) -> u32 {
        self.client_initial_size
    }

    pub fn outcome(&self) -> TraceOutcome {
        self.outcome
    }

    pub fn handshake_confirmed_us(&self) -> Option<u64> {
        self.handshake_confirmed_us
    }

    pub fn frames_visible(&self) -> bool {
        self.frames_visible
    }

    pub fn stateless_reset(&self) -> bool {
        self.stateless_reset
    }

    pub fn server_datagrams(&self) -> impl Iterator<Item = &Datagram> {
        self.datagrams.iter().filter(|d| d.is_server())
    }

    pub fn client_datagrams(&self) -> impl Iterator<Item = &Datagram> {
        self.datagrams.iter().filter(|d| !d.is_server())
    }

    pub fn total_bytes(&self, direction: Direction) -> u64 {
        self.datagrams
            .iter()
            .filter(|d| d.direction == direction)
            .map(|d| u64::from(d.udp_payload_len))
            .sum()
    }

    pub fn has_server_packet(&self, kind: PacketKind) -> bool {
        self.server_datagrams().any(|d| d.has_packet(kind))
    }
}

/// Collects datagrams and validates the trace invariants on [`TraceBuilder::build`].
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    target: Option<String>,
    datagrams: Vec<Datagram>,
    client_initial_size: Option<u32>,
    outcome: TraceOutcome,
    handshake_confirmed_us: Option<u64>,
    frames_visible: bool,
    stateless_reset: bool,
}

impl Default for TraceBuilder {
    fn default() -> Self {
        Self {
            target: None,
            datagrams: Vec::new(),
            client_initial_size: None,
            outcome: TraceOutcome::Completed,
            handshake_confirmed_us: None,
            frames_visible: true,
            stateless_reset: false,
        }
    }
}

impl TraceBuilder {
    pub fn target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn outcome(mut self, outcome: TraceOutcome) -> Self {
        self.outcome = outcome;
        self
    }

    /// Declares the client Initial size; defaults to the first datagram's length.
    pub fn client_initial_size(mut self, size: u32) -> Self {
        self.client_initial_size = Some(size);
        self
    }

    pub fn confirmed_at(mut self, time_us: Option<u64>) -> Self {
        self.handshake_confirmed_us = time_us;
        self
    }

    pub fn frames_visible(mut self, visible: bool) -> Self {
        self.frames_visible = visible;
        self
    }

    pub fn stateless_reset(mut self, reset: bool) -> Self {
        self.stateless_reset = reset;
        self
    }

    pub fn push(&mut self, datagram: Datagram) {
        self.datagrams.push(datagram);
    }

    pub fn datagram(mut self, datagram: Datagram) -> Self {
        self.datagrams.push(datagram);
        self
    }

    pub fn datagrams(mut self, datagrams: impl IntoIterator<Item = Datagram>) -> Self {
        self.datagrams.extend(datagrams);
        self
    }

    pub fn len(&self) -> usize {
        self.datagrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datagrams.is_empty()
    }

    pub fn build(self) -> Result<HandshakeTrace, TraceError> {
        let first = self.datagrams.first().ok_or(TraceError::Empty)?;
        if first.is_server() || !first.has_packet(PacketKind::Initial) {
            return Err(TraceError::FirstNotClientInitial);
        }
        let declared = self.client_initial_size.unwrap_or(first.udp_payload_len);
        if declared != first.udp_payload_len {
            return Err(TraceError::InitialSizeMismatch { declared, actual: first.udp_payload_len });
        }
        let mut last_time = 0;
        for (index, d) in self.datagrams.iter().enumerate() {
            d.validate_at(index)?;
            if d.time_us < last_time {
                return Err(TraceError::TimeOrder { index });
            }
            last_time = d.time_us;
        }
        Ok(HandshakeTrace {
            target: self.target,
            datagrams: self.datagrams,
            client_initial_size: declared,
            outcome: self.outcome,
            handshake_confirmed_us: self.handshake_confirmed_us,
            frames_visible: self.frames_visible,
            stateless_reset: self.stateless_reset,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn builder_validates_first_datagram() {
        let err = HandshakeTrace::builder(TraceOutcome::Completed)
            .datagram(server(0, PacketKind::Initial, 1200))
            .build()
            .unwrap_err();
        assert_eq!(err, TraceError::FirstNotClientInitial);
        assert_eq!(HandshakeTrace::builder(TraceOutcome::Completed).build().unwrap_err(), TraceError::Empty);
    }

    #[test]
    fn initial_size_must_match() {
        let err = HandshakeTrace::builder(TraceOutcome::Completed)
            .client_initial_size(1250)
            .datagram(client_initial(0, 1252))
            .build()
            .unwrap_err();
        assert_eq!(err, TraceError::InitialSizeMismatch { declared: 1250, actual: 1252 });
    }

    #[test]
    fn length_identity_is_enforced() {
        let mut d = client_initial(0, 1200);
        d.udp_payload_len = 1201;
        let err = HandshakeTrace::builder(TraceOutcome::Completed).datagram(d).build().unwrap_err();
        assert!(matches!(err, TraceError::LengthMismatch { index: 0, .. }));
    }

    #[test]
    fn retry_frames_rejected() {
        let mut r = server(5, PacketKind::Retry, 60);
        r.packets[0].frames.push(FrameSummary::other(4));
        let err = HandshakeTrace::builder(TraceOutcome::Completed)
            .datagram(client_initial(0, 1200))
            .datagram(r)
            .build()
            .unwrap_err();
        assert_eq!(err, TraceError::RetryWithFrames { index: 1 });
    }

    #[test]
    fn padding_frames_carry_no_tls() {
        let mut d = server(5, PacketKind::Initial, 1200);
        d.packets[0].frames = vec![FrameSummary { kind: FrameKind::Padding, payload_len: 100, crypto_tls_len: 1 }];
        let err = HandshakeTrace::builder(TraceOutcome::Completed)
            .datagram(client_initial(0, 1200))
            .datagram(d)
            .build()
            .unwrap_err();
        assert_eq!(err, TraceError::FrameInvariant { index: 1 });
    }

    #[test]
    fn oversized_datagram_rejected() {
        let d = Datagram::from_packets(Direction::ServerToClient, 1, vec![PacketRecord::new(PacketKind::OneRtt, 65_528)], 0);
        let err = HandshakeTrace::builder(TraceOutcome::Completed)
            .datagram(client_initial(0, 1200))
            .datagram(d)
            .build()
            .unwrap_err();
        assert_eq!(err, TraceError::DatagramSize { index: 1, len: 65_528 });
    }

    #[test]
    fn initial_size_range() {
        assert!(InitialSize::new(1199).is_err());
        assert!(InitialSize::new(65_528).is_err());
        assert_eq!(InitialSize::new(1357).unwrap().budget(), 4071);
        let grid = InitialSize::grid(1200, 1472, 10).unwrap();
        assert_eq!(grid.len(), 28);
        assert_eq!(grid.last().unwrap().get(), 1470);
    }
}
