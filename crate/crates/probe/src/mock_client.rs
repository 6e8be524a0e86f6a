//! Client for the plaintext mock wire.

use std::collections::VecDeque;

use quicaudit_core::{Direction, PacketKind, MIN_INITIAL_SIZE};
use quicaudit_mock::server::parse_server_hello;
use quicaudit_mock::wire::{decode, ConnId, DatagramBuilder, Frame, Packet};

use crate::config::{ProbeConfig, ProbeMode, ACK_DELAY_US};
use crate::reassembly::Reassembly;
use crate::session::{ClientSession, ProbeOutput, Recorder};
use crate::ProbeError;

const CLIENT_HELLO_LEN: usize = 293;
const FINISHED_LEN: usize = 36;

#[derive(Debug, Default)]
struct Space {
    largest: Option<u16>,
    next_pn: u16,
}

impl Space {
    fn next(&mut self) -> u16 {
        let pn = self.next_pn;
        self.next_pn += 1;
        pn
    }

    fn ack(&self) -> Option<Frame> {
        self.largest.map(|l| Frame::Ack { largest: u64::from(l), delay: 0 })
    }

    fn saw(&mut self, pn: u16) {
        self.largest = Some(self.largest.map_or(pn, |l| l.max(pn)));
    }
}

pub struct MockClient {
    host: String,
    initial_size: usize,
    mode: ProbeMode,
    retry_enabled: bool,
    dcid: ConnId,
    scid: ConnId,
    token: Vec<u8>,
    initial: Space,
    handshake: Space,
    handshake_total: Option<u64>,
    handshake_crypto: Reassembly,
    ack_at: Option<u64>,
    finished_sent: bool,
    retried: bool,
    halted: bool,
    out: VecDeque<Vec<u8>>,
    rec: Recorder,
}

impl MockClient {
    pub fn new(cfg: &ProbeConfig, dcid: ConnId, scid: ConnId) -> Self {
        let mut c = MockClient {
            host: cfg.host.clone(),
            initial_size: cfg.initial_size.get() as usize,
            mode: cfg.mode,
            retry_enabled: cfg.retry_enabled,
            dcid,
            scid,
            token: Vec::new(),
            initial: Space::default(),
            handshake: Space::default(),
            handshake_total: None,
            handshake_crypto: Reassembly::default(),
            ack_at: None,
            finished_sent: false,
            retried: false,
            halted: false,
            out: VecDeque::new(),
            rec: Recorder::default(),
        };
        c.queue_client_hello();
        c
    }

    fn client_hello(&self) -> Vec<u8> {
        let mut ch = vec![0u8; CLIENT_HELLO_LEN];
        ch[..4].copy_from_slice(b"MCH1");
        let name = self.host.as_bytes();
        let n = name.len().min(CLIENT_HELLO_LEN - 4);
        ch[4..4 + n].copy_from_slice(&name[..n]);
        ch
    }

    fn initial_packet(&mut self, frames: Vec<Frame>) -> Packet {
        let pn = self.initial.next();
        Packet::new(PacketKind::Initial, self.dcid, self.scid, pn, frames).with_token(self.token.clone())
    }

    /// Pads the Initial packet (the first one) so the datagram has `len` bytes.
    fn padded(mut packets: Vec<Packet>, len: usize) -> Vec<u8> {
        let used: usize = packets.iter().map(Packet::encoded_len).sum();
        if let Some(pad) = len.checked_sub(used).filter(|p| *p > 0) {
            packets[0].frames.push(Frame::Padding(pad));
        }
        DatagramBuilder::new(packets).encode()
    }

    fn queue_client_hello(&mut self) {
        let hello = Frame::Crypto { offset: 0, data: self.client_hello() };
        let p = self.initial_packet(vec![hello]);
        let bytes = Self::padded(vec![p], self.initial_size);
        self.out.push_back(bytes);
    }

    fn queue_ack(&mut self, finished: bool) {
        let mut packets = Vec::new();
        if let Some(ack) = self.initial.ack() {
            packets.push(self.initial_packet(vec![ack]));
        }
        let mut hs_frames: Vec<Frame> = self.handshake.ack().into_iter().collect();
        if finished {
            hs_frames.push(Frame::Crypto { offset: 0, data: vec![0x14; FINISHED_LEN] });
        }
        if !hs_frames.is_empty() {
            let pn = self.handshake.next();
            packets.push(Packet::new(PacketKind::Handshake, self.dcid, self.scid, pn, hs_frames));
        }
        if packets.is_empty() {
            return;
        }
        let has_initial = packets[0].kind == PacketKind::Initial;
        let bytes = if has_initial {
            Self::padded(packets, usize::from(MIN_INITIAL_SIZE))
        } else {
            DatagramBuilder::new(packets).encode()
        };
        self.out.push_back(bytes);
    }

    fn handshake_complete(&self) -> bool {
        self.handshake_total.is_some_and(|t| self.handshake_crypto.delivered() >= t)
    }

    fn on_packet(&mut self, p: &Packet) {
        match p.kind {
            PacketKind::Retry => {
                if self.mode == ProbeMode::NoAck || self.retried {
                    return;
                }
                if !self.retry_enabled {
                    self.halted = true;
                    return;
                }
                self.retried = true;
                self.dcid = p.scid;
                self.token = p.token.clone();
                self.queue_client_hello();
            }
            PacketKind::VersionNegotiation => self.halted = true,
            PacketKind::Initial => {
                self.dcid = p.scid;
                self.initial.saw(p.pn);
                for (_, data) in p.crypto_frames() {
                    if let Some(total) = parse_server_hello(data) {
                        self.handshake_total = Some(u64::from(total));
                    }
                }
            }
            PacketKind::Handshake => {
                self.handshake.saw(p.pn);
                for (offset, data) in p.crypto_frames() {
                    self.handshake_crypto.insert(offset, data);
                    self.handshake_crypto.read();
                }
            }
            PacketKind::OneRtt => {
                if p.frames.contains(&Frame::HandshakeDone) {
                    self.rec.completed = true;
                }
            }
        }
        if p.frames.iter().any(|f| matches!(f, Frame::ConnectionClose { .. })) {
            self.rec.refused = true;
        }
    }
}

impl ClientSession for MockClient {
    fn poll_transmit(&mut self, now_us: u64) -> Option<Vec<u8>> {
        let bytes = self.out.pop_front()?;
        let decoded = decode(&bytes).expect("own datagram decodes");
        self.rec.push(decoded.to_datagram(Direction::ClientToServer, now_us));
        Some(bytes)
    }

    fn handle_datagram(&mut self, now_us: u64, data: &[u8]) {
        let Ok(decoded) = decode(data) else {
            self.rec.note = Some(format!("undecodable {} byte datagram", data.len()));
            return;
        };
        self.rec.push(decoded.to_datagram(Direction::ServerToClient, now_us));
        for p in &decoded.packets {
            self.on_packet(p);
        }
        if self.mode == ProbeMode::NoAck || self.finished_sent {
            return;
        }
        if self.handshake_complete() {
            self.rec.confirmed_at = Some(now_us);
            self.finished_sent = true;
            self.ack_at = None;
            self.queue_ack(true);
        } else if decoded.packets.iter().any(|p| p.is_ack_eliciting() && p.kind != PacketKind::Retry) {
            self.ack_at = Some(now_us + ACK_DELAY_US);
        }
    }

    fn poll_timeout(&self) -> Option<u64> {
        self.ack_at
    }

    fn handle_timeout(&mut self, now_us: u64) {
        if self.ack_at.is_some_and(|t| t <= now_us) {
            self.ack_at = None;
            self.queue_ack(false);
        }
    }

    fn is_done(&self) -> bool {
        self.halted || self.rec.refused || (self.mode == ProbeMode::Complete && self.rec.completed && self.out.is_empty())
    }

    fn finish(self: Box<Self>) -> Result<ProbeOutput, ProbeError> {
        let (trace, note) = self.rec.build(&self.host, self.initial_size as u32, true)?;
        Ok(ProbeOutput { trace, server_chain: None, note })
    }
}
