//! Live handshake probing: QUIC Initial-size probes in complete and no-ACK
//! modes, DNS resolution and HTTPS certificate collection.

pub mod config;
pub mod dns;
pub mod fixture;
pub mod driver;
pub mod https;
pub mod mock_client;
mod probe;
pub mod quic;
mod reassembly;
mod tls;
pub mod session;

use thiserror::Error;

pub use config::{ProbeConfig, ProbeMode, TransportKind};
pub use driver::Link;
pub use probe::{apply_probe, new_session, probe_loopback, probe_once, sweep, sweep_loopback, sweep_records, unix_ms, SweepItem};
pub use session::{ClientSession, ProbeOutput};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace: {0}")]
    Trace(#[from] quicaudit_core::TraceError),
    #[error("tls: {0}")]
    Tls(String),
}
