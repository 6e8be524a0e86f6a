//! Sans-IO mock server: feed it datagrams and timer ticks, collect the
//! datagrams it wants to send.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::hash::Hash;

use quicaudit_core::PacketKind;

use crate::spec::{BehaviorSpec, ResendPolicy, RetryMode, MIN_HANDSHAKE_PACKET, RESEND_BASE_US, SERVER_HELLO_LEN};
use crate::wire::{decode, ConnId, DatagramBuilder, Frame, Packet, CID_LEN};

pub const SERVER_HELLO_MAGIC: &[u8; 4] = b"MSH1";
const RETRY_TOKEN_PREFIX: &[u8] = b"mock-retry:";
pub const FINISHED_HISTORY: usize = 10_000;
const HANDSHAKE_HEADER: usize = 27 + crate::wire::CRYPTO_HEADER_LEN;

/// ServerHello stand-in: magic plus the number of Handshake-space CRYPTO
/// bytes that follow.
pub fn server_hello(handshake_crypto_len: u32) -> Vec<u8> {
    let mut sh = vec![0u8; SERVER_HELLO_LEN];
    sh[..4].copy_from_slice(SERVER_HELLO_MAGIC);
    sh[4..8].copy_from_slice(&handshake_crypto_len.to_be_bytes());
    sh
}

pub fn parse_server_hello(data: &[u8]) -> Option<u32> {
    (data.len() >= 8 && &data[..4] == SERVER_HELLO_MAGIC).then(|| u32::from_be_bytes(data[4..8].try_into().unwrap()))
}

/// Splits `total` bytes into Handshake packet sizes of at least
/// [`MIN_HANDSHAKE_PACKET`]. The first packet may use `first_room` (space left
/// in a coalesced datagram); the others at most `cap`.
fn split_handshake(total: usize, first_room: usize, cap: usize) -> (Option<usize>, Vec<usize>) {
    let mut rem = total;
    let mut first = None;
    if first_room >= MIN_HANDSHAKE_PACKET {
        let mut take = rem.min(first_room);
        if rem - take > 0 && rem - take < MIN_HANDSHAKE_PACKET {
            take = rem - MIN_HANDSHAKE_PACKET;
        }
        if take >= MIN_HANDSHAKE_PACKET {
            first = Some(take);
            rem -= take;
        }
    }
    let mut rest = Vec::new();
    while rem > 0 {
        let mut take = rem.min(cap);
        if rem - take > 0 && rem - take < MIN_HANDSHAKE_PACKET {
            take = rem - MIN_HANDSHAKE_PACKET;
        }
        rest.push(take);
        rem -= take;
    }
    (first, rest)
}

fn crypto_pattern(offset: usize, len: usize) -> Vec<u8> {
    (offset..offset + len).map(|i| (i % 251) as u8).collect()
}

fn handshake_packet(dcid: ConnId, scid: ConnId, wire_len: usize, offset: usize) -> Packet {
    let data = crypto_pattern(offset, wire_len - HANDSHAKE_HEADER);
    Packet::new(PacketKind::Handshake, dcid, scid, 0, vec![Frame::Crypto { offset: offset as u64, data }])
}

/// The server's first flight for one connection.
#[derive(Debug, Clone)]
pub struct Flight {
    pub datagrams: Vec<DatagramBuilder>,
    pub handshake_crypto_len: usize,
}

impl Flight {
    pub fn build(spec: &BehaviorSpec, dcid: ConnId, scid: ConnId, ack_largest: u64) -> Flight {
        let pad = spec.superfluous_padding as usize;
        let core = (spec.chain_len + spec.handshake_overhead) as usize;
        let cap = spec.max_datagram as usize;
        let init_core = spec.initial_packet_core_len();
        let hs_total = core - init_core;
        let initial_pad = if spec.coalesce { pad } else { pad - pad / 2 };
        let first_room = if spec.coalesce { cap.saturating_sub(init_core + initial_pad) } else { 0 };
        let (first, rest) = split_handshake(hs_total, first_room, cap);
        let handshake_crypto_len =
            first.iter().chain(&rest).map(|w| w - HANDSHAKE_HEADER).sum::<usize>();

        let mut frames = Vec::new();
        if spec.coalesce {
            frames.push(Frame::Ack { largest: ack_largest, delay: 0 });
        }
        frames.push(Frame::Crypto { offset: 0, data: server_hello(handshake_crypto_len as u32) });
        if initial_pad > 0 {
            frames.push(Frame::Padding(initial_pad));
        }
        let initial = Packet::new(PacketKind::Initial, dcid, scid, 0, frames);

        let mut datagrams = Vec::new();
        if !spec.coalesce {
            let ack = Packet::new(PacketKind::Initial, dcid, scid, 0, vec![Frame::Ack { largest: ack_largest, delay: 0 }]);
            datagrams.push(DatagramBuilder::new(vec![ack]).with_trailing_padding(pad / 2));
        }
        let mut offset = 0;
        let mut first_dg = vec![initial];
        if let Some(w) = first {
            first_dg.push(handshake_packet(dcid, scid, w, offset));
            offset += w - HANDSHAKE_HEADER;
        }
        datagrams.push(DatagramBuilder::new(first_dg));
        for w in rest {
            datagrams.push(DatagramBuilder::new(vec![handshake_packet(dcid, scid, w, offset)]));
            offset += w - HANDSHAKE_HEADER;
        }
        let mut flight = Flight { datagrams, handshake_crypto_len };
        flight.number(&mut PacketNumbers::default());
        flight
    }

    pub fn len(&self) -> usize {
        self.datagrams.iter().map(DatagramBuilder::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.datagrams.is_empty()
    }

    fn number(&mut self, pns: &mut PacketNumbers) {
        for d in &mut self.datagrams {
            for p in &mut d.packets {
                p.pn = pns.next(p.kind);
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PacketNumbers(BTreeMap<PacketKind, u16>);

impl PacketNumbers {
    fn next(&mut self, kind: PacketKind) -> u16 {
        let pn = self.0.entry(kind).or_insert(0);
        let out = *pn;
        *pn = pn.wrapping_add(1);
        out
    }
}

/// Byte accounting of one connection as seen by the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConnectionStats {
    pub received_pre_validation: u64,
    pub sent_pre_validation: u64,
    pub sent_total: u64,
    pub validated: bool,
    pub resend_rounds: u32,
    pub handshake_done: bool,
}

impl ConnectionStats {
    pub fn within_limit(&self) -> bool {
        self.sent_pre_validation <= 3 * self.received_pre_validation
    }
}

#[derive(Debug)]
struct Connection {
    spec: BehaviorSpec,
    peer_cid: ConnId,
    local_cid: ConnId,
    flight: Flight,
    next: usize,
    first_sent_at: u64,
    next_resend_at: Option<u64>,
    pns: PacketNumbers,
    out: VecDeque<Vec<u8>>,
    stats: ConnectionStats,
}

impl Connection {
    fn new(spec: &BehaviorSpec, now: u64, peer_cid: ConnId, local_cid: ConnId, first_len: usize, validated: bool, ack: u64) -> Self {
        let flight = Flight::build(spec, peer_cid, local_cid, ack);
        let mut pns = PacketNumbers::default();
        flight.datagrams.iter().flat_map(|d| &d.packets).for_each(|p| {
            pns.next(p.kind);
        });
        let mut conn = Connection {
            spec: spec.clone(),
            peer_cid,
            local_cid,
            flight,
            next: 0,
            first_sent_at: now,
            next_resend_at: None,
            pns,
            out: VecDeque::new(),
            stats: ConnectionStats { validated, ..Default::default() },
        };
        conn.stats.received_pre_validation = if validated { 0 } else { first_len as u64 };
        conn.send_flight();
        if !validated && conn.spec.resend_policy != ResendPolicy::None {
            conn.next_resend_at = Some(now + RESEND_BASE_US);
        }
        conn
    }

    fn budget(&self) -> u64 {
        if self.stats.validated || !self.spec.enforces_limit() {
            u64::MAX
        } else {
            3 * self.stats.received_pre_validation
        }
    }

    fn emit(&mut self, bytes: Vec<u8>) {
        let n = bytes.len() as u64;
        if !self.stats.validated {
            self.stats.sent_pre_validation += n;
            debug_assert!(!self.spec.enforces_limit() || self.stats.within_limit());
        }
        self.stats.sent_total += n;
        self.out.push_back(bytes);
    }

    fn send_flight(&mut self) {
        while let Some(d) = self.flight.datagrams.get(self.next) {
            if self.stats.sent_pre_validation + d.len() as u64 > self.budget() {
                break;
            }
            let bytes = d.encode();
            self.next += 1;
            self.emit(bytes);
        }
    }

    fn resend_target(&self) -> u64 {
        match self.spec.resend_policy {
            ResendPolicy::None => 0,
            ResendPolicy::Capped3x => self.budget(),
            ResendPolicy::Uncapped(total) => total,
        }
    }

    fn on_timeout(&mut self, now: u64) {
        let Some(at) = self.next_resend_at else { return };
        if now < at || self.stats.validated {
            return;
        }
        let target = self.resend_target();
        let sent = self.stats.sent_pre_validation;
        let round: usize = self.flight.datagrams[..self.next].iter().map(DatagramBuilder::len).sum();
        let allowed = target.saturating_sub(sent).min(round as u64) as usize;
        let mut left_after = target.saturating_sub(sent + allowed as u64) as usize;
        let mut bytes = allowed;
        if left_after > 0 && left_after < MIN_HANDSHAKE_PACKET && bytes >= 2 * MIN_HANDSHAKE_PACKET {
            bytes -= MIN_HANDSHAKE_PACKET - left_after;
            left_after = MIN_HANDSHAKE_PACKET;
        }
        if bytes >= MIN_HANDSHAKE_PACKET {
            let (_, sizes) = split_handshake(bytes, 0, self.spec.max_datagram as usize);
            let mut offset = 0;
            for w in sizes {
                let mut p = handshake_packet(self.peer_cid, self.local_cid, w, offset);
                p.pn = self.pns.next(PacketKind::Handshake);
                offset = (offset + w - HANDSHAKE_HEADER) % self.flight.handshake_crypto_len.max(1);
                self.emit(DatagramBuilder::new(vec![p]).encode());
            }
            self.stats.resend_rounds += 1;
        }
        self.next_resend_at = (left_after >= MIN_HANDSHAKE_PACKET)
            .then(|| self.first_sent_at + RESEND_BASE_US * ((1u64 << (self.stats.resend_rounds + 1).min(40)) - 1));
    }

    fn on_datagram(&mut self, packets: &[Packet]) {
        if !self.stats.validated {
            self.stats.validated = true;
            self.next_resend_at = None;
        }
        self.send_flight();
        let finished = packets.iter().any(|p| p.kind == PacketKind::Handshake && p.crypto_frames().next().is_some());
        if finished && !self.stats.handshake_done {
            self.stats.handshake_done = true;
            let mut done = Packet::new(PacketKind::OneRtt, self.peer_cid, self.local_cid, 0, vec![Frame::HandshakeDone]);
            done.pn = self.pns.next(PacketKind::OneRtt);
            self.emit(DatagramBuilder::new(vec![done]).encode());
        }
    }
}

/// One mock endpoint serving many peers. `P` identifies a peer (a socket
/// address, or an index in a simulation).
#[derive(Debug)]
pub struct MockEndpoint<P> {
    spec: BehaviorSpec,
    conns: HashMap<ConnId, (P, Connection)>,
    by_initial_dcid: HashMap<ConnId, ConnId>,
    out: VecDeque<(P, Vec<u8>)>,
    next_cid: u64,
    dropped: u64,
    finished: VecDeque<ConnectionStats>,
}

impl<P: Copy + Eq + Hash> MockEndpoint<P> {
    pub fn new(spec: BehaviorSpec) -> Self {
        MockEndpoint {
            spec,
            conns: HashMap::new(),
            by_initial_dcid: HashMap::new(),
            out: VecDeque::new(),
            next_cid: 1,
            dropped: 0,
            finished: VecDeque::new(),
        }
    }

    pub fn spec(&self) -> &BehaviorSpec {
        &self.spec
    }

    /// Datagrams discarded by the simulated encapsulation clamp or as garbage.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn fresh_cid(&mut self) -> ConnId {
        let mut cid = [0u8; CID_LEN];
        cid[..2].copy_from_slice(b"ms");
        cid[2..].copy_from_slice(&self.next_cid.to_be_bytes()[2..]);
        self.next_cid += 1;
        cid
    }

    pub fn handle(&mut self, now_us: u64, peer: P, datagram: &[u8]) {
        if self.spec.drops(datagram.len()) {
            self.dropped += 1;
            return;
        }
        let Ok(decoded) = decode(datagram) else {
            self.dropped += 1;
            return;
        };
        let Some(first) = decoded.packets.first() else { return };
        let dcid = self.by_initial_dcid.get(&first.dcid).copied().unwrap_or(first.dcid);
        if let Some((_, conn)) = self.conns.get_mut(&dcid) {
            conn.on_datagram(&decoded.packets);
            return;
        }
        if first.kind != PacketKind::Initial {
            self.dropped += 1;
            return;
        }
        let token_ok = first.token.starts_with(RETRY_TOKEN_PREFIX);
        if self.spec.retry == RetryMode::Always && !token_ok {
            let local = self.fresh_cid();
            let mut token = RETRY_TOKEN_PREFIX.to_vec();
            token.extend_from_slice(&first.dcid);
            let mut bytes = Vec::new();
            Packet::retry(first.scid, local, token).encode(&mut bytes);
            self.out.push_back((peer, bytes));
            return;
        }
        let local = if token_ok { first.dcid } else { self.fresh_cid() };
        self.by_initial_dcid.insert(first.dcid, local);
        let conn = Connection::new(&self.spec, now_us, first.scid, local, datagram.len(), token_ok, u64::from(first.pn));
        self.conns.insert(local, (peer, conn));
    }

    pub fn poll_transmit(&mut self) -> Option<(P, Vec<u8>)> {
        if let Some(out) = self.out.pop_front() {
            return Some(out);
        }
        self.conns.values_mut().find_map(|(peer, c)| c.out.pop_front().map(|b| (*peer, b)))
    }

    pub fn poll_timeout(&self) -> Option<u64> {
        self.conns.values().filter_map(|(_, c)| c.next_resend_at).min()
    }

    pub fn handle_timeout(&mut self, now_us: u64) {
        for (_, c) in self.conns.values_mut() {
            c.on_timeout(now_us);
        }
    }

    /// Finished connections (oldest first, at most [`FINISHED_HISTORY`])
    /// followed by live ones.
    pub fn stats(&self) -> Vec<ConnectionStats> {
        let mut live: Vec<_> = self.conns.iter().map(|(cid, (_, c))| (*cid, c.stats)).collect();
        live.sort_by_key(|(cid, _)| *cid);
        self.finished.iter().copied().chain(live.into_iter().map(|(_, s)| s)).collect()
    }

    /// Forgets connections that finished and have nothing left to send.
    pub fn prune(&mut self) {
        let done: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, (_, c))| c.stats.handshake_done && c.out.is_empty())
            .map(|(k, _)| *k)
            .collect();
        for cid in done {
            if let Some((_, c)) = self.conns.remove(&cid) {
                if self.finished.len() == FINISHED_HISTORY {
                    self.finished.pop_front();
                }
                self.finished.push_back(c.stats);
            }
            self.by_initial_dcid.retain(|_, v| *v != cid);
        }
    }

    pub fn connections(&self) -> usize {
        self.conns.len()
    }
}
