//! Plaintext packet codec that mirrors the QUIC v1 long/short header and
//! frame layout without packet protection.
//!
//! Long header: flags, version, DCID, SCID, token (Initial only), a 2 byte
//! length varint and a 2 byte packet number. Short header: flags, DCID and a
//! 2 byte packet number. CRYPTO frames always use a 4 byte offset varint and a
//! 2 byte length varint, so their encoding overhead is a constant 7 bytes.
//! Anything after the last packet whose first byte lacks the fixed bit is
//! UDP-layer padding.

use quicaudit_core::{Datagram, Direction, FrameSummary, PacketKind, PacketRecord};
use thiserror::Error;

pub const MOCK_VERSION: u32 = 0x4d4f_434b;
pub const CID_LEN: usize = 8;
pub const PN_LEN: usize = 2;
pub const CRYPTO_HEADER_LEN: usize = 7;
pub const RETRY_TAG_LEN: usize = 16;

const FRAME_PADDING: u8 = 0x00;
const FRAME_ACK: u8 = 0x02;
const FRAME_CRYPTO: u8 = 0x06;
const FRAME_CONNECTION_CLOSE: u8 = 0x1c;
const FRAME_HANDSHAKE_DONE: u8 = 0x1e;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("unknown version {0:#010x}")]
    Version(u32),
    #[error("unknown frame type {0:#04x}")]
    Frame(u8),
    #[error("varint {0} does not fit {1} bytes")]
    VarintRange(u64, usize),
}

pub type ConnId = [u8; CID_LEN];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Padding(usize),
    Ack { largest: u64, delay: u64 },
    Crypto { offset: u64, data: Vec<u8> },
    HandshakeDone,
    ConnectionClose { code: u64 },
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        match self {
            Frame::Padding(n) => *n,
            Frame::Ack { largest, delay } => 1 + varint_len(*largest) + varint_len(*delay) + 2,
            Frame::Crypto { data, .. } => CRYPTO_HEADER_LEN + data.len(),
            Frame::HandshakeDone => 1,
            Frame::ConnectionClose { code } => 1 + varint_len(*code) + 2,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Frame::Padding(n) => out.resize(out.len() + n, FRAME_PADDING),
            Frame::Ack { largest, delay } => {
                out.push(FRAME_ACK);
                put_varint(out, *largest);
                put_varint(out, *delay);
                out.extend_from_slice(&[0, 0]);
            }
            Frame::Crypto { offset, data } => {
                out.push(FRAME_CRYPTO);
                put_varint_fixed(out, *offset, 4).expect("crypto offset below 2^30");
                put_varint_fixed(out, data.len() as u64, 2).expect("crypto chunk below 16 KiB");
                out.extend_from_slice(data);
            }
            Frame::HandshakeDone => out.push(FRAME_HANDSHAKE_DONE),
            Frame::ConnectionClose { code } => {
                out.push(FRAME_CONNECTION_CLOSE);
                put_varint(out, *code);
                out.extend_from_slice(&[0, 0]);
            }
        }
    }

    fn summary(&self) -> FrameSummary {
        let len = self.encoded_len() as u32;
        match self {
            Frame::Padding(_) => FrameSummary::padding(len),
            Frame::Ack { .. } => FrameSummary::ack(len),
            Frame::Crypto { data, .. } => FrameSummary::crypto(len, data.len() as u32),
            Frame::HandshakeDone | Frame::ConnectionClose { .. } => FrameSummary::other(len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub dcid: ConnId,
    pub scid: ConnId,
    pub token: Vec<u8>,
    pub pn: u16,
    pub frames: Vec<Frame>,
}

impl Packet {
    pub fn new(kind: PacketKind, dcid: ConnId, scid: ConnId, pn: u16, frames: Vec<Frame>) -> Self {
        Packet { kind, dcid, scid, token: Vec::new(), pn, frames }
    }

    pub fn retry(dcid: ConnId, scid: ConnId, token: Vec<u8>) -> Self {
        Packet { kind: PacketKind::Retry, dcid, scid, token, pn: 0, frames: Vec::new() }
    }

    pub fn with_token(mut self, token: Vec<u8>) -> Self {
        self.token = token;
        self
    }

    pub fn header_len(&self) -> usize {
        header_len(self.kind, self.token.len())
    }

    pub fn payload_len(&self) -> usize {
        self.frames.iter().map(Frame::encoded_len).sum()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.payload_len()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let type_bits = match self.kind {
            PacketKind::Initial => 0,
            PacketKind::Handshake => 2,
            PacketKind::Retry => 3,
            PacketKind::OneRtt => {
                out.push(0x40 | (PN_LEN as u8 - 1));
                out.extend_from_slice(&self.dcid);
                out.extend_from_slice(&self.pn.to_be_bytes());
                self.frames.iter().for_each(|f| f.encode(out));
                return;
            }
            PacketKind::VersionNegotiation => {
                out.push(0x80);
                out.extend_from_slice(&0u32.to_be_bytes());
                put_cids(out, &self.dcid, &self.scid);
                out.extend_from_slice(&MOCK_VERSION.to_be_bytes());
                return;
            }
        };
        out.push(0xc0 | (type_bits << 4) | (PN_LEN as u8 - 1));
        out.extend_from_slice(&MOCK_VERSION.to_be_bytes());
        put_cids(out, &self.dcid, &self.scid);
        if self.kind == PacketKind::Retry {
            out.extend_from_slice(&self.token);
            out.extend_from_slice(&[0; RETRY_TAG_LEN]);
            return;
        }
        if self.kind == PacketKind::Initial {
            put_varint(out, self.token.len() as u64);
            out.extend_from_slice(&self.token);
        }
        put_varint_fixed(out, (PN_LEN + self.payload_len()) as u64, 2).expect("packet below 16 KiB");
        out.extend_from_slice(&self.pn.to_be_bytes());
        self.frames.iter().for_each(|f| f.encode(out));
    }

    pub fn crypto_frames(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.frames.iter().filter_map(|f| match f {
            Frame::Crypto { offset, data } => Some((*offset, data.as_slice())),
            _ => None,
        })
    }

    pub fn is_ack_eliciting(&self) -> bool {
        self.frames.iter().any(|f| !matches!(f, Frame::Padding(_) | Frame::Ack { .. }))
    }

    pub fn record(&self) -> PacketRecord {
        PacketRecord::new(self.kind, self.encoded_len() as u32)
            .with_frames(self.frames.iter().map(Frame::summary).collect())
            .with_cids(&self.scid, &self.dcid)
    }
}

/// Header bytes of a packet of `kind` with the mock's fixed CID and packet
/// number lengths. Retry counts its integrity tag as header.
pub fn header_len(kind: PacketKind, token_len: usize) -> usize {
    let long = 1 + 4 + 2 + 2 * CID_LEN;
    match kind {
        PacketKind::Initial => long + varint_len(token_len as u64) + token_len + 2 + PN_LEN,
        PacketKind::Handshake => long + 2 + PN_LEN,
        PacketKind::Retry => long + token_len + RETRY_TAG_LEN,
        PacketKind::OneRtt => 1 + CID_LEN + PN_LEN,
        PacketKind::VersionNegotiation => long + 4,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatagramBuilder {
    pub packets: Vec<Packet>,
    pub trailing_padding: usize,
}

impl DatagramBuilder {
    pub fn new(packets: Vec<Packet>) -> Self {
        DatagramBuilder { packets, trailing_padding: 0 }
    }

    pub fn with_trailing_padding(mut self, n: usize) -> Self {
        self.trailing_padding = n;
        self
    }

    pub fn len(&self) -> usize {
        self.packets.iter().map(Packet::encoded_len).sum::<usize>() + self.trailing_padding
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        self.packets.iter().for_each(|p| p.encode(&mut out));
        out.resize(out.len() + self.trailing_padding, 0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub packets: Vec<Packet>,
    pub trailing_padding: usize,
    pub len: usize,
}

impl Decoded {
    pub fn to_datagram(&self, direction: Direction, time_us: u64) -> Datagram {
        Datagram::from_packets(
            direction,
            time_us,
            self.packets.iter().map(Packet::record).collect(),
            self.trailing_padding as u32,
        )
    }
}

/// Parses every packet in a datagram. Short-header packets consume the rest
/// of the datagram.
pub fn decode(buf: &[u8]) -> Result<Decoded, WireError> {
    let mut r = Cursor { buf, pos: 0 };
    let mut packets = Vec::new();
    while r.remaining() > 0 {
        let first = r.peek()?;
        if first & 0x40 == 0 && !packets.is_empty() {
            break;
        }
        packets.push(decode_packet(&mut r)?);
    }
    Ok(Decoded { packets, trailing_padding: r.remaining(), len: buf.len() })
}

fn decode_packet(r: &mut Cursor<'_>) -> Result<Packet, WireError> {
    let first = r.u8("flags")?;
    if first & 0x80 == 0 {
        let dcid = r.cid()?;
        let pn = r.u16("packet number")?;
        let frames = decode_frames(r.take(r.remaining(), "payload")?)?;
        return Ok(Packet::new(PacketKind::OneRtt, dcid, [0; CID_LEN], pn, frames));
    }
    let version = r.u32("version")?;
    let (dcid, scid) = (r.sized_cid()?, r.sized_cid()?);
    if version == 0 {
        r.take(r.remaining(), "supported versions")?;
        return Ok(Packet::new(PacketKind::VersionNegotiation, dcid, scid, 0, Vec::new()));
    }
    if version != MOCK_VERSION {
        return Err(WireError::Version(version));
    }
    let kind = match (first >> 4) & 0x03 {
        0 => PacketKind::Initial,
        2 => PacketKind::Handshake,
        3 => {
            let rest = r.take(r.remaining(), "retry")?;
            let split = rest.len().checked_sub(RETRY_TAG_LEN).ok_or(WireError::Truncated("retry tag"))?;
            return Ok(Packet::retry(dcid, scid, rest[..split].to_vec()));
        }
        _ => return Err(WireError::Frame(first)),
    };
    let token = if kind == PacketKind::Initial {
        let n = r.varint()? as usize;
        r.take(n, "token")?.to_vec()
    } else {
        Vec::new()
    };
    let len = r.varint()? as usize;
    let body = r.take(len, "packet body")?;
    if body.len() < PN_LEN {
        return Err(WireError::Truncated("packet number"));
    }
    let pn = u16::from_be_bytes([body[0], body[1]]);
    let frames = decode_frames(&body[PN_LEN..])?;
    Ok(Packet { kind, dcid, scid, token, pn, frames })
}

fn decode_frames(buf: &[u8]) -> Result<Vec<Frame>, WireError> {
    let mut r = Cursor { buf, pos: 0 };
    let mut frames = Vec::new();
    while r.remaining() > 0 {
        let frame = match r.u8("frame type")? {
            FRAME_PADDING => {
                let mut n = 1;
                while r.remaining() > 0 && r.peek()? == FRAME_PADDING {
                    r.pos += 1;
                    n += 1;
                }
                Frame::Padding(n)
            }
            FRAME_ACK => {
                let largest = r.varint()?;
                let delay = r.varint()?;
                r.take(2, "ack ranges")?;
                Frame::Ack { largest, delay }
            }
            FRAME_CRYPTO => {
                let offset = r.varint()?;
                let n = r.varint()? as usize;
                Frame::Crypto { offset, data: r.take(n, "crypto data")?.to_vec() }
            }
            FRAME_HANDSHAKE_DONE => Frame::HandshakeDone,
            FRAME_CONNECTION_CLOSE => {
                let code = r.varint()?;
                r.take(2, "close reason")?;
                Frame::ConnectionClose { code }
            }
            other => return Err(WireError::Frame(other)),
        };
        frames.push(frame);
    }
    Ok(frames)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn peek(&self) -> Result<u8, WireError> {
        self.buf.get(self.pos).copied().ok_or(WireError::Truncated("byte"))
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WireError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WireError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn cid(&mut self) -> Result<ConnId, WireError> {
        Ok(self.take(CID_LEN, "connection id")?.try_into().expect("fixed length"))
    }

    fn sized_cid(&mut self) -> Result<ConnId, WireError> {
        let n = self.u8("cid length")? as usize;
        if n != CID_LEN {
            return Err(WireError::Truncated("connection id"));
        }
        self.cid()
    }

    fn varint(&mut self) -> Result<u64, WireError> {
        let first = self.peek()?;
        let len = 1usize << (first >> 6);
        let bytes = self.take(len, "varint")?;
        let mut v = u64::from(bytes[0] & 0x3f);
        for b in &bytes[1..] {
            v = (v << 8) | u64::from(*b);
        }
        Ok(v)
    }
}

fn put_cids(out: &mut Vec<u8>, dcid: &ConnId, scid: &ConnId) {
    out.push(CID_LEN as u8);
    out.extend_from_slice(dcid);
    out.push(CID_LEN as u8);
    out.extend_from_slice(scid);
}

pub fn varint_len(v: u64) -> usize {
    match v {
        0..=63 => 1,
        64..=16_383 => 2,
        16_384..=1_073_741_823 => 4,
        _ => 8,
    }
}

pub fn put_varint(out: &mut Vec<u8>, v: u64) {
    put_varint_fixed(out, v, varint_len(v)).expect("minimal length always fits");
}

pub fn put_varint_fixed(out: &mut Vec<u8>, v: u64, len: usize) -> Result<(), WireError> {
    if varint_len(v) > len || !matches!(len, 1 | 2 | 4 | 8) {
        return Err(WireError::VarintRange(v, len));
    }
    let tag = (len.trailing_zeros() as u64) << (8 * len - 2);
    let bytes = (v | tag).to_be_bytes();
    out.extend_from_slice(&bytes[8 - len..]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use quicaudit_core::FrameKind;

    const A: ConnId = [1; CID_LEN];
    const B: ConnId = [2; CID_LEN];

    #[test]
    fn varints() {
        for (v, len) in [(0u64, 1), (63, 1), (64, 2), (16_383, 2), (16_384, 4), (1 << 30, 8)] {
            let mut out = Vec::new();
            put_varint(&mut out, v);
            assert_eq!(out.len(), len);
            assert_eq!(Cursor { buf: &out, pos: 0 }.varint().unwrap(), v);
        }
        let mut out = Vec::new();
        put_varint_fixed(&mut out, 5, 4).unwrap();
        assert_eq!(out, [0x80, 0, 0, 5]);
        assert!(put_varint_fixed(&mut out, 70, 1).is_err());
    }

    #[test]
    fn header_lengths_match_encoding() {
        for kind in [PacketKind::Initial, PacketKind::Handshake, PacketKind::OneRtt] {
            let p = Packet::new(kind, A, B, 7, Vec::new());
            let mut out = Vec::new();
            p.encode(&mut out);
            assert_eq!(out.len(), p.header_len());
        }
        assert_eq!(header_len(PacketKind::Initial, 0), 28);
        assert_eq!(header_len(PacketKind::Handshake, 0), 27);
    }

    #[test]
    fn coalesced_round_trip_with_trailing_padding() {
        let d = DatagramBuilder::new(vec![
            Packet::new(
                PacketKind::Initial,
                A,
                B,
                0,
                vec![Frame::Ack { largest: 0, delay: 3 }, Frame::Crypto { offset: 0, data: vec![9; 90] }, Frame::Padding(40)],
            ),
            Packet::new(PacketKind::Handshake, A, B, 0, vec![Frame::Crypto { offset: 0, data: vec![7; 500] }]),
        ])
        .with_trailing_padding(33);
        let bytes = d.encode();
        assert_eq!(bytes.len(), d.len());
        let decoded = decode(&bytes).unwrap();
        assert_eq!(decoded.packets, d.packets);
        assert_eq!(decoded.trailing_padding, 33);

        let dg = decoded.to_datagram(Direction::ServerToClient, 5);
        dg.validate().unwrap();
        assert_eq!(dg.udp_payload_len as usize, bytes.len());
        assert_eq!(dg.packets[0].frames[2].kind, FrameKind::Padding);
        assert_eq!(dg.packets[1].frames[0].crypto_tls_len, 500);
    }

    #[test]
    fn retry_and_short_header() {
        let mut out = Vec::new();
        Packet::retry(A, B, b"tok".to_vec()).encode(&mut out);
        let d = decode(&out).unwrap();
        assert_eq!(d.packets[0].kind, PacketKind::Retry);
        assert_eq!(d.packets[0].token, b"tok");
        assert_eq!(d.packets[0].encoded_len(), out.len());

        let mut out = Vec::new();
        Packet::new(PacketKind::OneRtt, A, [0; CID_LEN], 3, vec![Frame::HandshakeDone]).encode(&mut out);
        let d = decode(&out).unwrap();
        assert_eq!(d.packets[0].frames, [Frame::HandshakeDone]);
    }

    #[test]
    fn truncation_is_an_error() {
        let mut out = Vec::new();
        Packet::new(PacketKind::Handshake, A, B, 0, vec![Frame::Crypto { offset: 0, data: vec![1; 50] }]).encode(&mut out);
        for cut in [1, 10, 30, out.len() - 1] {
            assert!(decode(&out[..cut]).is_err(), "cut {cut}");
        }
    }
}
