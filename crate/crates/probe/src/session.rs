use quicaudit_core::{Datagram, HandshakeTrace, TraceOutcome};

use crate::ProbeError;

/// A client handshake driven by an I/O loop. Implementations record every
/// datagram they send or receive; the driver supplies time in microseconds
/// since the probe started.
pub trait ClientSession: Send {
    /// Next datagram to put on the wire.
    fn poll_transmit(&mut self, now_us: u64) -> Option<Vec<u8>>;
    fn handle_datagram(&mut self, now_us: u64, data: &[u8]);
    /// Earliest time the session wants [`ClientSession::handle_timeout`].
    fn poll_timeout(&self) -> Option<u64>;
    fn handle_timeout(&mut self, now_us: u64);
    /// The session has nothing more to observe.
    fn is_done(&self) -> bool;
    fn finish(self: Box<Self>) -> Result<ProbeOutput, ProbeError>;
}

#[derive(Debug, Clone)]
pub struct ProbeOutput {
    pub trace: HandshakeTrace,
    /// DER certificates the server presented, when the transport decrypts them.
    pub server_chain: Option<Vec<Vec<u8>>>,
    pub note: Option<String>,
}

/// Per-probe bookkeeping shared by transports.
#[derive(Debug, Default)]
pub(crate) struct Recorder {
    pub datagrams: Vec<Datagram>,
    pub confirmed_at: Option<u64>,
    pub completed: bool,
    pub refused: bool,
    pub stateless_reset: bool,
    pub note: Option<String>,
}

impl Recorder {
    pub fn push(&mut self, d: Datagram) {
        self.datagrams.push(d);
    }

    pub fn server_seen(&self) -> bool {
        self.datagrams.iter().any(Datagram::is_server)
    }

    pub fn outcome(&self) -> TraceOutcome {
        if self.refused || self.stateless_reset {
            TraceOutcome::Refused
        } else if self.completed {
            TraceOutcome::Completed
        } else if self.server_seen() {
            TraceOutcome::TimedOut
        } else {
            TraceOutcome::Unreachable
        }
    }

    pub fn build(self, target: &str, initial_size: u32, frames_visible: bool) -> Result<(HandshakeTrace, Option<String>), ProbeError> {
        let trace = HandshakeTrace::builder(self.outcome())
            .target(target)
            .client_initial_size(initial_size)
            .confirmed_at(self.confirmed_at)
            .frames_visible(frames_visible)
            .stateless_reset(self.stateless_reset)
            .datagrams(self.datagrams)
            .build()?;
        Ok((trace, self.note))
    }
}
