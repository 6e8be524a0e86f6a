use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Datagram, FrameKind, HandshakeTrace, LimitPolicy, PacketKind, TraceOutcome};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("client sent no bytes before the validation point")]
    ZeroClientBytes,
    #[error("trace is not classifiable: {0}")]
    NotClassifiable(&'static str),
    #[error("frame summaries were not captured for this trace")]
    FramesUnavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HandshakeClass {
    OneRtt,
    Retry,
    MultiRtt,
    Amplification,
}

impl HandshakeClass {
    pub const ALL: [HandshakeClass; 4] = [Self::OneRtt, Self::Retry, Self::MultiRtt, Self::Amplification];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OneRtt => "ONE_RTT",
            Self::Retry => "RETRY",
            Self::MultiRtt => "MULTI_RTT",
            Self::Amplification => "AMPLIFICATION",
        }
    }
}

impl std::fmt::Display for HandshakeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HandshakeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown handshake class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub klass: HandshakeClass,
    pub amplification_factor: f64,
    pub pre_validation_server_bytes: u64,
    pub pre_validation_client_bytes: u64,
    pub client_flights: u32,
    pub limit_exceeded: bool,
    pub multi_rtt_flag: bool,
}

/// Index of the first client datagram that follows the first server
/// datagram, or `datagrams().len()` when there is none.
pub fn validation_point(trace: &HandshakeTrace) -> usize {
    let ds = trace.datagrams();
    let Some(first_server) = ds.iter().position(Datagram::is_server) else {
        return ds.len();
    };
    ds[first_server..]
        .iter()
        .position(|d| !d.is_server())
        .map_or(ds.len(), |i| first_server + i)
}

/// `(server, client)` UDP payload bytes sent before the validation point.
pub fn pre_validation_bytes(trace: &HandshakeTrace) -> (u64, u64) {
    let vp = validation_point(trace);
    trace.datagrams()[..vp].iter().fold((0, 0), |(s, c), d| {
        let len = u64::from(d.udp_payload_len);
        if d.is_server() {
            (s + len, c)
        } else {
            (s, c + len)
        }
    })
}

pub fn amplification_factor(trace: &HandshakeTrace) -> Result<f64, AnalysisError> {
    let (server, client) = pre_validation_bytes(trace);
    if client == 0 {
        return Err(AnalysisError::ZeroClientBytes);
    }
    Ok(server as f64 / client as f64)
}

/// Number of maximal runs of client datagrams sent before the client
/// considered the handshake complete (all runs when it never completed).
fn client_flights(trace: &HandshakeTrace) -> u32 {
    let cutoff = trace.handshake_confirmed_us().unwrap_or(u64::MAX);
    let mut flights = 0;
    let mut in_run = false;
    for d in trace.datagrams() {
        if d.is_server() {
            in_run = false;
        } else if d.time_us < cutoff {
            if !in_run {
                flights += 1;
            }
            in_run = true;
        }
    }
    flights
}

pub fn classify_handshake(trace: &HandshakeTrace, policy: LimitPolicy) -> Result<ClassificationResult, AnalysisError> {
    match trace.outcome() {
        TraceOutcome::Unreachable => return Err(AnalysisError::NotClassifiable("server unreachable")),
        TraceOutcome::Refused => return Err(AnalysisError::NotClassifiable("connection refused")),
        TraceOutcome::TimedOut if trace.server_datagrams().next().is_none() => {
            return Err(AnalysisError::NotClassifiable("no server datagrams"))
        }
        _ => {}
    }
    if trace.has_server_packet(PacketKind::VersionNegotiation) {
        return Err(AnalysisError::NotClassifiable("version negotiation"));
    }
    let (server, client) = pre_validation_bytes(trace);
    if client == 0 {
        return Err(AnalysisError::ZeroClientBytes);
    }
    let limit_exceeded = !limit_check(trace, policy).compliant;
    let flights = client_flights(trace);
    let multi_rtt_flag = flights >= 2;
    let klass = if trace.has_server_packet(PacketKind::Retry) {
        HandshakeClass::Retry
    } else if limit_exceeded {
        HandshakeClass::Amplification
    } else if multi_rtt_flag {
        HandshakeClass::MultiRtt
    } else {
        HandshakeClass::OneRtt
    };
    Ok(ClassificationResult {
        klass,
        amplification_factor: server as f64 / client as f64,
        pre_validation_server_bytes: server,
        pre_validation_client_bytes: client,
        client_flights: flights,
        limit_exceeded,
        multi_rtt_flag,
    })
}

/// Pre-validation server bytes split by purpose. The four fields sum to the
/// pre-validation server byte count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadBreakdown {
    pub tls_bytes: u64,
    pub quic_header_bytes: u64,
    pub padding_bytes: u64,
    pub ack_overhead_bytes: u64,
}

impl PayloadBreakdown {
    pub fn total(&self) -> u64 {
        self.tls_bytes + self.quic_header_bytes + self.padding_bytes + self.ack_overhead_bytes
    }
}

/// Packet headers, CRYPTO frame headers, AEAD tags and non-handshake frames
/// count as `quic_header_bytes`; trailing UDP padding counts as padding.
pub fn payload_decomposition(trace: &HandshakeTrace) -> Result<PayloadBreakdown, AnalysisError> {
    if !trace.frames_visible() {
        return Err(AnalysisError::FramesUnavailable);
    }
    let vp = validation_point(trace);
    let mut out = PayloadBreakdown::default();
    for d in trace.datagrams()[..vp].iter().filter(|d| d.is_server()) {
        out.padding_bytes += u64::from(d.trailing_padding);
        for p in &d.packets {
            out.quic_header_bytes += u64::from(p.header_bytes());
            for f in &p.frames {
                let len = u64::from(f.payload_len);
                match f.kind {
                    FrameKind::Crypto => {
                        let tls = u64::from(f.crypto_tls_len);
                        out.tls_bytes += tls;
                        out.quic_header_bytes += len - tls;
                    }
                    FrameKind::Padding => out.padding_bytes += len,
                    FrameKind::Ack => out.ack_overhead_bytes += len,
                    FrameKind::Other => out.quic_header_bytes += len,
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoalescenceReport {
    /// Packets per server datagram, mapped to the number of datagrams.
    pub packets_per_datagram: BTreeMap<usize, usize>,
    pub max_packets_per_datagram: usize,
    /// Some server datagram carries both an Initial and a Handshake packet.
    pub initial_handshake_coalesced: bool,
    /// Some server datagram carries only an ACK-bearing Initial without TLS data.
    pub standalone_ack_datagram: bool,
    /// A standalone ACK datagram was sent and Initial and Handshake were never coalesced.
    pub separate_ack_flight: bool,
}

/// Coalescence behaviour over all server datagrams. Detecting a standalone
/// ACK datagram needs frame summaries; without them it reports `false`.
pub fn coalescence_report(trace: &HandshakeTrace) -> CoalescenceReport {
    let mut hist = BTreeMap::new();
    let mut coalesced = false;
    let mut standalone_ack = false;
    for d in trace.server_datagrams() {
        *hist.entry(d.packets.len()).or_insert(0) += 1;
        coalesced |= d.has_packet(PacketKind::Initial) && d.has_packet(PacketKind::Handshake);
        if let [p] = d.packets.as_slice() {
            standalone_ack |= p.kind == PacketKind::Initial
                && p.has_frame(FrameKind::Ack)
                && !p.has_frame(FrameKind::Crypto);
        }
    }
    CoalescenceReport {
        max_packets_per_datagram: hist.keys().next_back().copied().unwrap_or(0),
        packets_per_datagram: hist,
        initial_handshake_coalesced: coalesced,
        standalone_ack_datagram: standalone_ack,
        separate_ack_flight: standalone_ack && !coalesced,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub policy: LimitPolicy,
    pub compliant: bool,
    /// Quantity the policy restricts: packets, datagrams or bytes.
    pub observed: u64,
    pub allowed: u64,
    pub detail: String,
}

pub fn limit_check(trace: &HandshakeTrace, policy: LimitPolicy) -> LimitVerdict {
    let vp = validation_point(trace);
    let pre = || trace.datagrams()[..vp].iter().filter(|d| d.is_server());
    let (observed, allowed, unit) = match policy {
        LimitPolicy::HandshakePackets3 => {
            let n = pre().flat_map(|d| &d.packets).filter(|p| p.kind == PacketKind::Handshake).count();
            (n as u64, 3, "Handshake packets")
        }
        LimitPolicy::Datagrams3 => (pre().count() as u64, 3, "datagrams"),
        LimitPolicy::Bytes3x | LimitPolicy::Data3xRfc9000 => {
            let (server, client) = pre_validation_bytes(trace);
            (server, 3 * client, "bytes")
        }
    };
    let compliant = observed <= allowed;
    let detail = format!(
        "{observed} {unit} before validation, {} {allowed} under {policy}",
        if compliant { "within" } else { "exceeds" }
    );
    LimitVerdict { policy, compliant, observed, allowed, detail }
}
