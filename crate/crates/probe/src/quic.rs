//! QUIC v1 client that drives a real TLS 1.3 handshake and records every
//! datagram with decrypted frame boundaries.
//!
//! Only the handshake is implemented: no streams, no loss recovery, no key
//! updates. Packets that arrive before their keys are buffered and their
//! frames filled in once the keys exist.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use quicaudit_core::{Datagram, Direction, FrameSummary, PacketKind, PacketRecord, MIN_INITIAL_SIZE};
use quicaudit_mock::wire::{put_varint, put_varint_fixed, varint_len};
use rand::RngCore;
use ring::aead;
use rustls::quic::{self, KeyChange, Keys};
use rustls::ClientConfig;

use crate::config::{ProbeConfig, ProbeMode, ACK_DELAY_US};
use crate::reassembly::Reassembly;
use crate::session::{ClientSession, ProbeOutput, Recorder};
use crate::ProbeError;

pub const QUIC_V1: u32 = 1;
const TAG_LEN: usize = 16;
const PN_LEN: usize = 2;
const CID_LEN: usize = 8;
const SAMPLE_LEN: usize = 16;
const MAX_ACK_RANGES: usize = 32;

const RETRY_KEY: [u8; 16] = [
    0xbe, 0x0c, 0x69, 0x0b, 0x9f, 0x66, 0x57, 0x5a, 0x1d, 0x76, 0x6b, 0x54, 0xe3, 0x68, 0xc8, 0x4e,
];
const RETRY_NONCE: [u8; 12] = [0x46, 0x15, 0x99, 0xd3, 0x5d, 0x63, 0x2b, 0xf2, 0x23, 0x98, 0x25, 0xbb];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Space {
    Initial = 0,
    Handshake = 1,
    Data = 2,
}

impl Space {
    fn kind(self) -> PacketKind {
        match self {
            Space::Initial => PacketKind::Initial,
            Space::Handshake => PacketKind::Handshake,
            Space::Data => PacketKind::OneRtt,
        }
    }
}

#[derive(Default)]
struct SpaceState {
    keys: Option<Keys>,
    crypto_rx: Reassembly,
    crypto_tx: Vec<u8>,
    tx_offset: u64,
    next_pn: u64,
    received: BTreeSet<u64>,
}

/// Minimal byte reader over QUIC encodings.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn u8(&mut self) -> Option<u8> {
        let b = *self.buf.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn varint(&mut self) -> Option<u64> {
        let first = self.u8()?;
        let len = 1usize << (first >> 6);
        let mut v = u64::from(first & 0x3f);
        for _ in 1..len {
            v = (v << 8) | u64::from(self.u8()?);
        }
        Some(v)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Plaintext payload under construction with its frame summaries.
#[derive(Default)]
struct Payload {
    bytes: Vec<u8>,
    frames: Vec<FrameSummary>,
}

impl Payload {
    fn ack(&mut self, received: &BTreeSet<u64>) {
        let mut ranges: Vec<(u64, u64)> = Vec::new();
        for &pn in received.iter().rev() {
            if let Some((lo, _)) = ranges.last_mut().filter(|(lo, _)| *lo == pn + 1) {
                *lo = pn;
            } else if ranges.len() == MAX_ACK_RANGES {
                break;
            } else {
                ranges.push((pn, pn));
            }
        }
        let Some(&(first_lo, largest)) = ranges.first() else { return };
        let start = self.bytes.len();
        self.bytes.push(0x02);
        put_varint(&mut self.bytes, largest);
        put_varint(&mut self.bytes, 0);
        put_varint(&mut self.bytes, ranges.len() as u64 - 1);
        put_varint(&mut self.bytes, largest - first_lo);
        let mut prev_lo = first_lo;
        for &(lo, hi) in &ranges[1..] {
            put_varint(&mut self.bytes, prev_lo - hi - 2);
            put_varint(&mut self.bytes, hi - lo);
            prev_lo = lo;
        }
        self.frames.push(FrameSummary::ack((self.bytes.len() - start) as u32));
    }

    fn crypto(&mut self, offset: u64, data: &[u8]) {
        let start = self.bytes.len();
        self.bytes.push(0x06);
        put_varint(&mut self.bytes, offset);
        put_varint(&mut self.bytes, data.len() as u64);
        self.bytes.extend_from_slice(data);
        self.frames.push(FrameSummary::crypto((self.bytes.len() - start) as u32, data.len() as u32));
    }

    fn padding(&mut self, n: usize) {
        if n == 0 {
            return;
        }
        self.bytes.resize(self.bytes.len() + n, 0);
        self.frames.push(FrameSummary::padding(n as u32));
    }

    fn other(&mut self, raw: &[u8]) {
        self.bytes.extend_from_slice(raw);
        self.frames.push(FrameSummary::other(raw.len() as u32));
    }

    /// Header protection samples 16 bytes starting 4 bytes into the packet
    /// number field.
    fn ensure_sample(&mut self) {
        let min = 4 + SAMPLE_LEN - PN_LEN - TAG_LEN;
        self.padding(min.saturating_sub(self.bytes.len()));
    }

    fn len(&self) -> usize {
        self.bytes.len()
    }
}

/// Result of parsing one decrypted payload.
#[derive(Default)]
struct Parsed {
    frames: Vec<FrameSummary>,
    crypto: Vec<(u64, Vec<u8>)>,
    close: Option<String>,
    handshake_done: bool,
    ack_eliciting: bool,
}

fn parse_frames(payload: &[u8]) -> Parsed {
    let mut out = Parsed::default();
    let mut r = Reader::new(payload);
    while r.remaining() > 0 {
        let start = r.pos;
        let Some(kind) = parse_one(&mut r, &mut out) else {
            out.frames.push(FrameSummary::other((payload.len() - start) as u32));
            out.ack_eliciting = true;
            break;
        };
        let len = (r.pos - start) as u32;
        let summary = match kind {
            Some(tls) => FrameSummary::crypto(len, tls),
            None => match payload[start] {
                0x00 => FrameSummary::padding(len),
                0x02 | 0x03 => FrameSummary::ack(len),
                _ => FrameSummary::other(len),
            },
        };
        match (out.frames.last_mut(), summary.kind) {
            (Some(prev), quicaudit_core::FrameKind::Padding) if prev.kind == quicaudit_core::FrameKind::Padding => {
                prev.payload_len += len;
            }
            _ => out.frames.push(summary),
        }
    }
    out
}

/// Parses one frame. Returns `Some(Some(tls_len))` for CRYPTO, `Some(None)`
/// for everything else, `None` when malformed.
fn parse_one(r: &mut Reader<'_>, out: &mut Parsed) -> Option<Option<u32>> {
    let ty = r.varint()?;
    match ty {
        0x00 => {
            while r.buf.get(r.pos) == Some(&0) {
                r.pos += 1;
            }
        }
        0x01 => out.ack_eliciting = true,
        0x02 | 0x03 => {
            r.varint()?;
            r.varint()?;
            let ranges = r.varint()?;
            r.varint()?;
            for _ in 0..ranges {
                r.varint()?;
                r.varint()?;
            }
            if ty == 0x03 {
                for _ in 0..3 {
                    r.varint()?;
                }
            }
        }
        0x04 => {
            out.ack_eliciting = true;
            for _ in 0..3 {
                r.varint()?;
            }
        }
        0x05 | 0x11 => {
            out.ack_eliciting = true;
            r.varint()?;
            r.varint()?;
        }
        0x06 => {
            let offset = r.varint()?;
            let len = r.varint()? as usize;
            let data = r.bytes(len)?;
            out.crypto.push((offset, data.to_vec()));
            out.ack_eliciting = true;
            return Some(Some(len as u32));
        }
        0x07 => {
            out.ack_eliciting = true;
            let len = r.varint()? as usize;
            r.bytes(len)?;
        }
        0x08..=0x0f => {
            out.ack_eliciting = true;
            r.varint()?;
            if ty & 0x04 != 0 {
                r.varint()?;
            }
            let len = if ty & 0x02 != 0 { r.varint()? as usize } else { r.remaining() };
            r.bytes(len)?;
        }
        0x10 | 0x12 | 0x13 | 0x14 | 0x16 | 0x17 | 0x19 => {
            out.ack_eliciting = true;
            r.varint()?;
        }
        0x15 => {
            out.ack_eliciting = true;
            r.varint()?;
            r.varint()?;
        }
        0x18 => {
            out.ack_eliciting = true;
            r.varint()?;
            r.varint()?;
            let len = usize::from(r.u8()?);
            r.bytes(len + 16)?;
        }
        0x1a | 0x1b => {
            out.ack_eliciting = true;
            r.bytes(8)?;
        }
        0x1c | 0x1d => {
            let code = r.varint()?;
            if ty == 0x1c {
                r.varint()?;
            }
            let len = r.varint()? as usize;
            let reason = String::from_utf8_lossy(r.bytes(len)?);
            out.close = Some(format!("connection close 0x{code:x}: {reason}"));
        }
        0x1e => {
            out.ack_eliciting = true;
            out.handshake_done = true;
        }
        0x30 => {
            out.ack_eliciting = true;
            r.pos = r.buf.len();
        }
        0x31 => {
            out.ack_eliciting = true;
            let len = r.varint()? as usize;
            r.bytes(len)?;
        }
        _ => return None,
    }
    Some(None)
}

fn decode_pn(largest: Option<u64>, truncated: u64, bits: u32) -> u64 {
    let expected = largest.map_or(0, |l| l + 1);
    let win = 1u64 << bits;
    let hwin = win / 2;
    let candidate = (expected & !(win - 1)) | truncated;
    if candidate + hwin <= expected && candidate < (1 << 62) - win {
        candidate + win
    } else if candidate > expected + hwin && candidate >= win {
        candidate - win
    } else {
        candidate
    }
}

fn retry_tag(odcid: &[u8], retry_without_tag: &[u8]) -> [u8; TAG_LEN] {
    let mut pseudo = Vec::with_capacity(1 + odcid.len() + retry_without_tag.len());
    pseudo.push(odcid.len() as u8);
    pseudo.extend_from_slice(odcid);
    pseudo.extend_from_slice(retry_without_tag);
    let key = aead::LessSafeKey::new(aead::UnboundKey::new(&aead::AES_128_GCM, &RETRY_KEY).expect("key length"));
    let nonce = aead::Nonce::assume_unique_for_key(RETRY_NONCE);
    let tag = key
        .seal_in_place_separate_tag(nonce, aead::Aad::from(&pseudo), &mut [])
        .expect("empty plaintext");
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(tag.as_ref());
    out
}

/// Client transport parameters.
fn transport_params(scid: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut int = |id: u64, v: u64| {
        put_varint(&mut out, id);
        put_varint(&mut out, varint_len(v) as u64);
        put_varint(&mut out, v);
    };
    int(0x01, 30_000);
    int(0x03, 1472);
    int(0x04, 1 << 20);
    int(0x05, 1 << 18);
    int(0x06, 1 << 18);
    int(0x07, 1 << 18);
    int(0x08, 0);
    int(0x09, 3);
    int(0x0e, 2);
    put_varint(&mut out, 0x0f);
    put_varint(&mut out, scid.len() as u64);
    out.extend_from_slice(scid);
    out
}

fn stateless_reset_token(params: &[u8]) -> Option<[u8; 16]> {
    let mut r = Reader::new(params);
    while r.remaining() > 0 {
        let id = r.varint()?;
        let len = r.varint()? as usize;
        let v = r.bytes(len)?;
        if id == 0x02 && len == 16 {
            return v.try_into().ok();
        }
    }
    None
}

/// Boundaries of one packet inside a received datagram.
struct RawPacket {
    space: Option<Space>,
    kind: PacketKind,
    start: usize,
    end: usize,
    pn_offset: usize,
    dcid: Vec<u8>,
    scid: Vec<u8>,
    token: Vec<u8>,
}

/// Splits a datagram into packets. Returns the packets and the count of
/// trailing bytes that do not form a packet.
fn split_datagram(data: &[u8]) -> (Vec<RawPacket>, usize) {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < data.len() {
        let first = data[pos];
        if first & 0x80 == 0 {
            if first & 0x40 == 0 {
                break;
            }
            let dcid_end = (pos + 1 + CID_LEN).min(data.len());
            out.push(RawPacket {
                space: Some(Space::Data),
                kind: PacketKind::OneRtt,
                start: pos,
                end: data.len(),
                pn_offset: dcid_end,
                dcid: data[pos + 1..dcid_end].to_vec(),
                scid: Vec::new(),
                token: Vec::new(),
            });
            pos = data.len();
            break;
        }
        match parse_long(data, pos) {
            Some(p) => {
                pos = p.end;
                out.push(p);
            }
            None => {
                out.push(RawPacket {
                    space: None,
                    kind: PacketKind::Initial,
                    start: pos,
                    end: data.len(),
                    pn_offset: data.len(),
                    dcid: Vec::new(),
                    scid: Vec::new(),
                    token: Vec::new(),
                });
                pos = data.len();
            }
        }
    }
    (out, data.len() - pos)
}

fn parse_long(data: &[u8], start: usize) -> Option<RawPacket> {
    let mut r = Reader::new(data);
    r.pos = start;
    let first = r.u8()?;
    let version = u32::from_be_bytes(r.bytes(4)?.try_into().ok()?);
    let dlen = usize::from(r.u8()?);
    let dcid = r.bytes(dlen)?.to_vec();
    let slen = usize::from(r.u8()?);
    let scid = r.bytes(slen)?.to_vec();
    let mut p = RawPacket {
        space: None,
        kind: PacketKind::VersionNegotiation,
        start,
        end: data.len(),
        pn_offset: data.len(),
        dcid,
        scid,
        token: Vec::new(),
    };
    if version == 0 {
        return Some(p);
    }
    if version != QUIC_V1 {
        return None;
    }
    let ty = (first >> 4) & 0x03;
    match ty {
        0 => {
            let tlen = r.varint()? as usize;
            p.token = r.bytes(tlen)?.to_vec();
            p.kind = PacketKind::Initial;
            p.space = Some(Space::Initial);
        }
        2 => {
            p.kind = PacketKind::Handshake;
            p.space = Some(Space::Handshake);
        }
        3 => {
            let rest = data.len() - r.pos;
            if rest < TAG_LEN {
                return None;
            }
            p.token = r.bytes(rest - TAG_LEN)?.to_vec();
            p.kind = PacketKind::Retry;
            return Some(p);
        }
        _ => {
            // 0-RTT is never sent by servers; keep the boundary only.
            p.kind = PacketKind::OneRtt;
        }
    }
    let len = r.varint()? as usize;
    p.pn_offset = r.pos;
    p.end = r.pos.checked_add(len).filter(|e| *e <= data.len())?;
    Some(p)
}

struct Pending {
    datagram: usize,
    packet: usize,
    space: Space,
    bytes: Vec<u8>,
    pn_offset: usize,
}

struct Outgoing {
    bytes: Vec<u8>,
    packets: Vec<PacketRecord>,
}

pub struct QuicClient {
    host: String,
    initial_size: usize,
    mode: ProbeMode,
    retry_enabled: bool,
    suite: &'static rustls::Tls13CipherSuite,
    quic_alg: &'static dyn quic::Algorithm,
    tls: quic::ClientConnection,
    spaces: [SpaceState; 3],
    write_space: Space,
    odcid: Vec<u8>,
    dcid: Vec<u8>,
    scid: Vec<u8>,
    token: Vec<u8>,
    peer_cid_set: bool,
    hello: Vec<u8>,
    reset_token: Option<[u8; 16]>,
    ack_at: Option<u64>,
    ack_needed: bool,
    finished_sent: bool,
    retried: bool,
    halted: bool,
    close_sent: bool,
    pending: Vec<Pending>,
    out: VecDeque<Outgoing>,
    rec: Recorder,
}

impl QuicClient {
    pub fn new(cfg: &ProbeConfig) -> Result<Self, ProbeError> {
        let mut rng = rand::rng();
        let mut dcid = vec![0u8; CID_LEN];
        let mut scid = vec![0u8; CID_LEN];
        rng.fill_bytes(&mut dcid);
        rng.fill_bytes(&mut scid);
        Self::with_cids(cfg, dcid, scid)
    }

    pub fn with_cids(cfg: &ProbeConfig, dcid: Vec<u8>, scid: Vec<u8>) -> Result<Self, ProbeError> {
        let tls_err = |e: rustls::Error| ProbeError::Tls(e.to_string());
        let config: Arc<ClientConfig> = crate::tls::client_config(&[cfg.alpn.as_str()], true).map_err(tls_err)?;
        let name = crate::tls::server_name(&cfg.host).map_err(tls_err)?;
        let tls = quic::ClientConnection::new(config, quic::Version::V1, name, transport_params(&scid)).map_err(tls_err)?;
        let suite = match rustls::crypto::ring::cipher_suite::TLS13_AES_128_GCM_SHA256 {
            rustls::SupportedCipherSuite::Tls13(s) => s,
            _ => unreachable!("TLS 1.3 suite"),
        };
        let quic_alg = suite.quic.ok_or_else(|| ProbeError::Tls("suite lacks QUIC support".into()))?;
        let mut c = QuicClient {
            host: cfg.host.clone(),
            initial_size: cfg.initial_size.get() as usize,
            mode: cfg.mode,
            retry_enabled: cfg.retry_enabled,
            suite,
            quic_alg,
            tls,
            spaces: Default::default(),
            write_space: Space::Initial,
            odcid: dcid.clone(),
            dcid,
            scid,
            token: Vec::new(),
            peer_cid_set: false,
            hello: Vec::new(),
            reset_token: None,
            ack_at: None,
            ack_needed: false,
            finished_sent: false,
            retried: false,
            halted: false,
            close_sent: false,
            pending: Vec::new(),
            out: VecDeque::new(),
            rec: Recorder::default(),
        };
        c.install_initial_keys();
        c.pull_tls();
        c.hello = std::mem::take(&mut c.spaces[0].crypto_tx);
        c.queue_hello()?;
        Ok(c)
    }

    fn install_initial_keys(&mut self) {
        self.spaces[0].keys =
            Some(Keys::initial(quic::Version::V1, self.suite, self.quic_alg, &self.dcid, rustls::Side::Client));
    }

    fn pull_tls(&mut self) -> bool {
        let mut changed = false;
        loop {
            let mut buf = Vec::new();
            let change = self.tls.write_hs(&mut buf);
            self.spaces[self.write_space as usize].crypto_tx.extend_from_slice(&buf);
            match change {
                Some(KeyChange::Handshake { keys }) => {
                    self.spaces[1].keys = Some(keys);
                    self.write_space = Space::Handshake;
                }
                Some(KeyChange::OneRtt { keys, .. }) => {
                    self.spaces[2].keys = Some(keys);
                    self.write_space = Space::Data;
                }
                None => break,
            }
            changed = true;
        }
        changed
    }

    fn header_len(&self, space: Space) -> usize {
        match space {
            Space::Initial => {
                7 + self.dcid.len() + self.scid.len() + varint_len(self.token.len() as u64) + self.token.len() + 2 + PN_LEN
            }
            Space::Handshake => 7 + self.dcid.len() + self.scid.len() + 2 + PN_LEN,
            Space::Data => 1 + self.dcid.len() + PN_LEN,
        }
    }

    fn packet_len(&self, space: Space, payload_len: usize) -> usize {
        self.header_len(space) + payload_len + TAG_LEN
    }

    fn seal(&mut self, space: Space, mut payload: Payload) -> (Vec<u8>, PacketRecord) {
        payload.ensure_sample();
        let st = &mut self.spaces[space as usize];
        let pn = st.next_pn;
        st.next_pn += 1;
        let mut pkt = Vec::with_capacity(self.header_len(space) + payload.len() + TAG_LEN);
        let pn_bits = (PN_LEN - 1) as u8;
        match space {
            Space::Data => {
                pkt.push(0x40 | pn_bits);
                pkt.extend_from_slice(&self.dcid);
            }
            Space::Initial | Space::Handshake => {
                let ty = if space == Space::Initial { 0 } else { 2 };
                pkt.push(0xc0 | (ty << 4) | pn_bits);
                pkt.extend_from_slice(&QUIC_V1.to_be_bytes());
                pkt.push(self.dcid.len() as u8);
                pkt.extend_from_slice(&self.dcid);
                pkt.push(self.scid.len() as u8);
                pkt.extend_from_slice(&self.scid);
                if space == Space::Initial {
                    put_varint(&mut pkt, self.token.len() as u64);
                    pkt.extend_from_slice(&self.token);
                }
                let len = (PN_LEN + payload.len() + TAG_LEN) as u64;
                put_varint_fixed(&mut pkt, len, 2).expect("length fits two bytes");
            }
        }
        let pn_offset = pkt.len();
        pkt.extend_from_slice(&(pn as u16).to_be_bytes());
        let header_end = pkt.len();
        pkt.extend_from_slice(&payload.bytes);
        let keys = self.spaces[space as usize].keys.as_ref().expect("keys for sealed space");
        let (header, body) = pkt.split_at_mut(header_end);
        let tag = keys.local.packet.encrypt_in_place(pn, header, body).expect("seal");
        pkt.extend_from_slice(tag.as_ref());
        let mut sample = [0u8; SAMPLE_LEN];
        sample.copy_from_slice(&pkt[pn_offset + 4..pn_offset + 4 + SAMPLE_LEN]);
        let (head, rest) = pkt.split_at_mut(pn_offset);
        keys.local.header.encrypt_in_place(&sample, &mut head[0], &mut rest[..PN_LEN]).expect("header protection");
        let record = PacketRecord::new(space.kind(), pkt.len() as u32)
            .with_frames(payload.frames)
            .with_cids(&self.scid, &self.dcid);
        (pkt, record)
    }

    fn crypto_payload(&mut self, space: Space) -> Payload {
        let mut p = Payload::default();
        let st = &mut self.spaces[space as usize];
        if !st.crypto_tx.is_empty() {
            let data = std::mem::take(&mut st.crypto_tx);
            p.crypto(st.tx_offset, &data);
            st.tx_offset += data.len() as u64;
        }
        p
    }

    fn queue_hello(&mut self) -> Result<(), ProbeError> {
        let mut p = Payload::default();
        p.crypto(0, &self.hello);
        self.spaces[0].tx_offset = self.hello.len() as u64;
        let used = self.packet_len(Space::Initial, p.len());
        if used > self.initial_size {
            return Err(ProbeError::Config(format!(
                "ClientHello needs {used} bytes, more than the {} byte Initial",
                self.initial_size
            )));
        }
        p.padding(self.initial_size - used);
        let (bytes, record) = self.seal(Space::Initial, p);
        self.out.push_back(Outgoing { bytes, packets: vec![record] });
        Ok(())
    }

    /// Initial ACK coalesced with Handshake ACK and pending Handshake CRYPTO,
    /// padded to the minimum Initial size when an Initial is present.
    fn queue_ack(&mut self) {
        let mut hs = Payload::default();
        let has_hs_keys = self.spaces[1].keys.is_some();
        if has_hs_keys {
            hs.ack(&self.spaces[1].received);
            let crypto = self.crypto_payload(Space::Handshake);
            hs.bytes.extend_from_slice(&crypto.bytes);
            hs.frames.extend(crypto.frames);
            if hs.len() > 0 {
                hs.ensure_sample();
            }
        }
        let mut init = Payload::default();
        init.ack(&self.spaces[0].received);
        let mut packets = Vec::new();
        let mut bytes = Vec::new();
        if init.len() > 0 {
            init.ensure_sample();
            let hs_len = if hs.len() > 0 { self.packet_len(Space::Handshake, hs.len()) } else { 0 };
            let used = self.packet_len(Space::Initial, init.len()) + hs_len;
            init.padding(usize::from(MIN_INITIAL_SIZE).saturating_sub(used));
            let (b, r) = self.seal(Space::Initial, init);
            bytes.extend_from_slice(&b);
            packets.push(r);
        }
        if hs.len() > 0 {
            let (b, r) = self.seal(Space::Handshake, hs);
            bytes.extend_from_slice(&b);
            packets.push(r);
        }
        if !packets.is_empty() {
            self.out.push_back(Outgoing { bytes, packets });
        }
    }

    fn queue_close(&mut self) {
        if self.close_sent || self.spaces[2].keys.is_none() {
            return;
        }
        self.close_sent = true;
        let mut p = Payload::default();
        p.other(&[0x1d, 0x00, 0x00]);
        let (bytes, record) = self.seal(Space::Data, p);
        self.out.push_back(Outgoing { bytes, packets: vec![record] });
    }

    /// Removes protection in place and returns the packet number and payload
    /// range within `pkt`.
    fn open(&self, space: Space, pkt: &mut [u8], pn_offset: usize) -> Option<(u64, std::ops::Range<usize>)> {
        let keys = self.spaces[space as usize].keys.as_ref()?;
        let sample: [u8; SAMPLE_LEN] = pkt.get(pn_offset + 4..pn_offset + 4 + SAMPLE_LEN)?.try_into().ok()?;
        let (head, rest) = pkt.split_at_mut(pn_offset);
        let pn_slot = rest.len().min(4);
        keys.remote.header.decrypt_in_place(&sample, &mut head[0], &mut rest[..pn_slot]).ok()?;
        let pn_len = usize::from(pkt[0] & 0x03) + 1;
        let truncated = pkt[pn_offset..pn_offset + pn_len].iter().fold(0u64, |a, b| (a << 8) | u64::from(*b));
        let largest = self.spaces[space as usize].received.last().copied();
        let pn = decode_pn(largest, truncated, 8 * pn_len as u32);
        let header_end = pn_offset + pn_len;
        let (header, body) = pkt.split_at_mut(header_end);
        let plain_len = keys.remote.packet.decrypt_in_place(pn, header, body).ok()?.len();
        Some((pn, header_end..header_end + plain_len))
    }

    /// Decrypts and processes one packet. Returns false when keys are missing
    /// or authentication fails.
    fn process(&mut self, now_us: u64, datagram: usize, index: usize, space: Space, bytes: &[u8], pn_offset: usize) -> bool {
        let mut pkt = bytes.to_vec();
        let Some((pn, range)) = self.open(space, &mut pkt, pn_offset) else { return false };
        let parsed = parse_frames(&pkt[range]);
        self.spaces[space as usize].received.insert(pn);
        self.rec.datagrams[datagram].packets[index].frames = parsed.frames;
        let st = &mut self.spaces[space as usize];
        for (offset, data) in &parsed.crypto {
            st.crypto_rx.insert(*offset, data);
        }
        let data = st.crypto_rx.read();
        if !data.is_empty() {
            if let Err(e) = self.tls.read_hs(&data) {
                self.rec.note = Some(format!("tls: {e}"));
                self.halted = true;
            }
            if self.pull_tls() {
                self.retry_pending(now_us);
            }
            if self.reset_token.is_none() {
                self.reset_token = self.tls.quic_transport_parameters().and_then(stateless_reset_token);
            }
        }
        if let Some(reason) = parsed.close {
            self.rec.refused = true;
            self.rec.note = Some(reason);
        }
        if parsed.handshake_done {
            self.rec.completed = true;
        }
        self.ack_needed |= parsed.ack_eliciting;
        true
    }

    fn retry_pending(&mut self, now_us: u64) {
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            if (self.spaces[p.space as usize].keys.is_none()
                || !self.process(now_us, p.datagram, p.packet, p.space, &p.bytes, p.pn_offset))
                && self.spaces[p.space as usize].keys.is_none() {
                    self.pending.push(p);
                }
        }
    }

    fn on_retry(&mut self, data: &[u8], raw: &RawPacket) {
        if self.mode == ProbeMode::NoAck || self.retried || self.peer_cid_set {
            return;
        }
        let body = &data[raw.start..data.len() - TAG_LEN];
        if retry_tag(&self.odcid, body)[..] != data[data.len() - TAG_LEN..] {
            self.rec.note = Some("retry integrity tag mismatch".into());
            return;
        }
        if !self.retry_enabled {
            self.halted = true;
            return;
        }
        self.retried = true;
        self.dcid = raw.scid.clone();
        self.token = raw.token.clone();
        self.install_initial_keys();
        if let Err(e) = self.queue_hello() {
            self.rec.note = Some(e.to_string());
            self.halted = true;
        }
    }
}

impl ClientSession for QuicClient {
    fn poll_transmit(&mut self, now_us: u64) -> Option<Vec<u8>> {
        let o = self.out.pop_front()?;
        self.rec.push(Datagram::from_packets(Direction::ClientToServer, now_us, o.packets, 0));
        Some(o.bytes)
    }

    fn handle_datagram(&mut self, now_us: u64, data: &[u8]) {
        let (raw, trailing) = split_datagram(data);
        let records = raw
            .iter()
            .map(|p| PacketRecord::new(p.kind, (p.end - p.start) as u32).with_cids(&p.scid, &p.dcid))
            .collect();
        let di = self.rec.datagrams.len();
        self.rec.push(Datagram::from_packets(Direction::ServerToClient, now_us, records, trailing as u32));
        for (pi, p) in raw.iter().enumerate() {
            match p.kind {
                PacketKind::VersionNegotiation => {
                    self.rec.note = Some("version negotiation".into());
                    self.halted = true;
                    continue;
                }
                PacketKind::Retry => {
                    self.on_retry(data, p);
                    continue;
                }
                _ => {}
            }
            let Some(space) = p.space else { continue };
            if space != Space::Data && !self.peer_cid_set && !p.scid.is_empty() {
                self.dcid = p.scid.clone();
                self.peer_cid_set = true;
            }
            let bytes = &data[p.start..p.end];
            let pn_offset = p.pn_offset - p.start;
            if self.spaces[space as usize].keys.is_none() {
                self.pending.push(Pending { datagram: di, packet: pi, space, bytes: bytes.to_vec(), pn_offset });
            } else if !self.process(now_us, di, pi, space, bytes, pn_offset)
                && space == Space::Data
                && self.reset_token.is_some_and(|t| data.len() >= 16 && data[data.len() - 16..] == t)
            {
                self.rec.stateless_reset = true;
            }
        }
        if self.mode == ProbeMode::NoAck || self.halted {
            return;
        }
        if !self.finished_sent && !self.tls.is_handshaking() {
            self.rec.confirmed_at = Some(now_us);
            self.finished_sent = true;
            self.ack_at = None;
            self.ack_needed = false;
            self.queue_ack();
        } else if !self.finished_sent && self.ack_needed {
            self.ack_needed = false;
            self.ack_at = Some(now_us + ACK_DELAY_US);
        }
        if self.rec.completed {
            self.queue_close();
        }
    }

    fn poll_timeout(&self) -> Option<u64> {
        self.ack_at
    }

    fn handle_timeout(&mut self, now_us: u64) {
        if self.ack_at.is_some_and(|t| t <= now_us) {
            self.ack_at = None;
            self.queue_ack();
        }
    }

    fn is_done(&self) -> bool {
        self.halted
            || self.rec.refused
            || self.rec.stateless_reset
            || (self.mode == ProbeMode::Complete && self.rec.completed && self.out.is_empty())
    }

    fn finish(self: Box<Self>) -> Result<ProbeOutput, ProbeError> {
        let server_chain = self.tls.peer_certificates().map(|c| c.iter().map(|d| d.to_vec()).collect());
        let visible = self.pending.is_empty();
        let (trace, note) = self.rec.build(&self.host, self.initial_size as u32, visible)?;
        Ok(ProbeOutput { trace, server_chain, note })
    }
}
