//! Minimal strict DER reader and writer.
//!
//! Only definite, minimally encoded lengths and low tag numbers are accepted,
//! which is what X.509 certificates use. Strictness is what makes
//! [`Node::encode`] reproduce its input exactly.

use thiserror::Error;

pub const TAG_INTEGER: u8 = 0x02;
pub const TAG_BIT_STRING: u8 = 0x03;
pub const TAG_OCTET_STRING: u8 = 0x04;
pub const TAG_NULL: u8 = 0x05;
pub const TAG_OID: u8 = 0x06;
pub const TAG_BOOLEAN: u8 = 0x01;
pub const TAG_SEQUENCE: u8 = 0x30;
pub const TAG_SET: u8 = 0x31;

/// Context-specific constructed tag `[n]`.
pub const fn context(n: u8) -> u8 {
    0xa0 | n
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DerError {
    #[error("unexpected end of input at offset {offset}")]
    Truncated { offset: usize },
    #[error("indefinite length at offset {offset}")]
    IndefiniteLength { offset: usize },
    #[error("non-minimal length encoding at offset {offset}")]
    NonMinimalLength { offset: usize },
    #[error("length field too large at offset {offset}")]
    LengthOverflow { offset: usize },
    #[error("high tag numbers are not supported (offset {offset})")]
    HighTagNumber { offset: usize },
    #[error("expected tag {expected:#04x}, found {found:#04x} at offset {offset}")]
    UnexpectedTag { offset: usize, expected: u8, found: u8 },
    #[error("{trailing} trailing bytes after element at offset {offset}")]
    TrailingBytes { offset: usize, trailing: usize },
    #[error("missing element at offset {offset}: {what}")]
    Missing { offset: usize, what: &'static str },
}

/// One tag-length-value element borrowed from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tlv<'a> {
    /// Offset of the tag byte within the outermost buffer.
    pub offset: usize,
    pub tag: u8,
    pub header_len: usize,
    pub value: &'a [u8],
    /// The complete encoding, header included.
    pub raw: &'a [u8],
}

impl<'a> Tlv<'a> {
    pub fn total_len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_constructed(&self) -> bool {
        self.tag & 0x20 != 0
    }

    pub fn value_offset(&self) -> usize {
        self.offset + self.header_len
    }

    /// Reads the children of a constructed element.
    pub fn children(&self) -> Result<Vec<Tlv<'a>>, DerError> {
        let mut reader = Reader::new(self.value, self.value_offset());
        let mut out = Vec::new();
        while !reader.is_empty() {
            out.push(reader.read()?);
        }
        Ok(out)
    }

    pub fn expect(self, tag: u8) -> Result<Self, DerError> {
        if self.tag == tag {
            Ok(self)
        } else {
            Err(DerError::UnexpectedTag { offset: self.offset, expected: tag, found: self.tag })
        }
    }
}

/// Sequential reader over DER elements.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    /// `base` is the absolute offset of `buf[0]`, used in error reports.
    pub fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn peek_tag(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    pub fn read(&mut self) -> Result<Tlv<'a>, DerError> {
        let start = self.pos;
        let offset = self.offset();
        let tag = *self.buf.get(start).ok_or(DerError::Truncated { offset })?;
        if tag & 0x1f == 0x1f {
            return Err(DerError::HighTagNumber { offset });
        }
        let first = *self.buf.get(start + 1).ok_or(DerError::Truncated { offset: offset + 1 })?;
        let (len, len_bytes) = if first < 0x80 {
            (first as usize, 1)
        } else if first == 0x80 {
            return Err(DerError::IndefiniteLength { offset });
        } else {
            let n = (first & 0x7f) as usize;
            if n > 4 {
                return Err(DerError::LengthOverflow { offset });
            }
            let bytes = self
                .buf
                .get(start + 2..start + 2 + n)
                .ok_or(DerError::Truncated { offset: offset + 2 })?;
            if bytes[0] == 0 {
                return Err(DerError::NonMinimalLength { offset });
            }
            let len = bytes.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
            if len < 0x80 {
                return Err(DerError::NonMinimalLength { offset });
            }
            (len, 1 + n)
        };
        let header_len = 1 + len_bytes;
        let end = start
            .checked_add(header_len)
            .and_then(|v| v.checked_add(len))
            .ok_or(DerError::LengthOverflow { offset })?;
        if end > self.buf.len() {
            return Err(DerError::Truncated { offset });
        }
        self.pos = end;
        Ok(Tlv {
            offset,
            tag,
            header_len,
            value: &self.buf[start + header_len..end],
            raw: &self.buf[start..end],
        })
    }

    pub fn read_tag(&mut self, tag: u8) -> Result<Tlv<'a>, DerError> {
        self.read()?.expect(tag)
    }

    /// Reads the next element only if it carries `tag`.
    pub fn read_optional(&mut self, tag: u8) -> Result<Option<Tlv<'a>>, DerError> {
        if self.peek_tag() == Some(tag) {
            self.read().map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Parses exactly one element spanning all of `buf`.
pub fn parse_single(buf: &[u8]) -> Result<Tlv<'_>, DerError> {
    let mut reader = Reader::new(buf, 0);
    let tlv = reader.read()?;
    if !reader.is_empty() {
        return Err(DerError::TrailingBytes { offset: 0, trailing: buf.len() - tlv.total_len() });
    }
    Ok(tlv)
}

/// Encodes a DER tag and length header.
pub fn encode_header(tag: u8, len: usize, out: &mut Vec<u8>) {
    out.push(tag);
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = len.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (bytes.len() - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

pub fn header_len(len: usize) -> usize {
    let mut v = Vec::with_capacity(6);
    encode_header(0, len, &mut v);
    v.len()
}

/// Owned DER tree. Constructed elements are expanded; primitives keep their
/// content bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Primitive { tag: u8, content: Vec<u8> },
    Constructed { tag: u8, children: Vec<Node> },
}

impl Node {
    pub fn parse(buf: &[u8]) -> Result<Node, DerError> {
        Self::from_tlv(&parse_single(buf)?)
    }

    pub fn from_tlv(tlv: &Tlv<'_>) -> Result<Node, DerError> {
        if tlv.is_constructed() {
            let children = tlv.children()?.iter().map(Node::from_tlv).collect::<Result<_, _>>()?;
            Ok(Node::Constructed { tag: tlv.tag, children })
        } else {
            Ok(Node::Primitive { tag: tlv.tag, content: tlv.value.to_vec() })
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Node::Primitive { tag, .. } | Node::Constructed { tag, .. } => *tag,
        }
    }

    fn content_len(&self) -> usize {
        match self {
            Node::Primitive { content, .. } => content.len(),
            Node::Constructed { children, .. } => children.iter().map(Node::encoded_len).sum(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        let len = self.content_len();
        header_len(len) + len
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        encode_header(self.tag(), self.content_len(), out);
        match self {
            Node::Primitive { content, .. } => out.extend_from_slice(content),
            Node::Constructed { children, .. } => children.iter().for_each(|c| c.encode_into(out)),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }
}

/// Renders an encoded OBJECT IDENTIFIER value as dotted decimal.
pub fn oid_to_string(value: &[u8]) -> String {
    let mut arcs: Vec<u64> = Vec::new();
    let mut acc: u64 = 0;
    for b in value {
        acc = (acc << 7) | u64::from(b & 0x7f);
        if b & 0x80 == 0 {
            if arcs.is_empty() {
                let first = if acc < 40 { 0 } else if acc < 80 { 1 } else { 2 };
                arcs.push(first);
                arcs.push(acc - first * 40);
            } else {
                arcs.push(acc);
            }
            acc = 0;
        }
    }
    arcs.iter().map(u64::to_string).collect::<Vec<_>>().join(".")
}
