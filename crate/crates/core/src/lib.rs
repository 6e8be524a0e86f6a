//! Core analysis for QUIC handshake audits.
//!
//! Everything in this crate is pure: handshake traces are classified and
//! accounted for anti-amplification compliance, certificate chains are parsed
//! down to per-field byte anatomy, chains are run through RFC 8879
//! compressors, and telescope backscatter is grouped into sessions. Network
//! I/O lives in `quicaudit-net`.

pub mod backscatter;
pub mod cert;
pub mod compress;
pub mod der;
pub mod records;
pub mod stats;
pub mod trace;

pub use trace::{
    amplification_factor, classify_handshake, coalescence_report, limit_check,
    payload_decomposition, validation_point, BrowserProfile, ClassificationResult, Datagram,
    Direction, FrameKind, FrameSummary, HandshakeClass, HandshakeTrace, InitialSize,
    LimitPolicy, PacketKind, PacketRecord, TraceError, TraceOutcome, DEFAULT_INITIAL_CAP,
    MAX_UDP_PAYLOAD, MIN_INITIAL_SIZE,
};
