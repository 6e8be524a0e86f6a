//! Certificate chain parsing and analysis.

mod analysis;
pub mod export;
mod truststore;
mod x509;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::der::{DerError, Node, Reader};

pub use analysis::{
    cruise_liner_score, detect_cross_signed, detect_included_anchor, field_anatomy, key_algo_stats,
    limit_fit, parent_chain_group, AnatomyAccumulator, AnatomySummary, AnchorFinding, CrossSignFinding,
    CruiseLiner, FieldStats, KeyAlgoRow, LimitFit, ParentChainGroup, RoleAnatomy,
    CRUISE_LINER_PERMILLE,
};
pub use truststore::{TrustStore, TrustStoreError};
pub use x509::name_to_string;

/// Chains above this many bytes count as large.
pub const LARGE_CHAIN_BYTES: u32 = 4000;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("no certificates in input")]
    Empty,
    #[error("certificate {index}: {source}")]
    Der { index: usize, source: DerError },
    #[error("PEM: {0}")]
    Pem(#[from] pem::PemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertRole {
    Leaf,
    Intermediate,
    Root,
}

impl CertRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Leaf => "LEAF",
            Self::Intermediate => "INTERMEDIATE",
            Self::Root => "ROOT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyAlgo {
    #[serde(rename = "RSA-2048")]
    Rsa2048,
    #[serde(rename = "RSA-4096")]
    Rsa4096,
    #[serde(rename = "ECDSA-256")]
    Ecdsa256,
    #[serde(rename = "ECDSA-384")]
    Ecdsa384,
    #[serde(rename = "OTHER")]
    Other,
}

impl KeyAlgo {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rsa2048 => "RSA-2048",
            Self::Rsa4096 => "RSA-4096",
            Self::Ecdsa256 => "ECDSA-256",
            Self::Ecdsa384 => "ECDSA-384",
            Self::Other => "OTHER",
        }
    }
}

impl fmt::Display for KeyAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Encoded size of each top-level certificate field, tag and length included.
/// `signature_algo` covers both AlgorithmIdentifier copies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSizes {
    pub version: u32,
    pub serial: u32,
    pub signature_algo: u32,
    pub issuer: u32,
    pub validity: u32,
    pub subject: u32,
    pub public_key: u32,
    pub extensions: u32,
    pub signature: u32,
}

impl FieldSizes {
    pub const NAMES: [&'static str; 9] = [
        "version",
        "serial",
        "signature_algo",
        "issuer",
        "validity",
        "subject",
        "public_key",
        "extensions",
        "signature",
    ];

    pub fn values(&self) -> [u32; 9] {
        [
            self.version,
            self.serial,
            self.signature_algo,
            self.issuer,
            self.validity,
            self.subject,
            self.public_key,
            self.extensions,
            self.signature,
        ]
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.values()[i])
    }

    pub fn total(&self) -> u32 {
        self.values().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertRecord {
    #[serde(with = "hex::serde")]
    pub der: Vec<u8>,
    pub der_len: u32,
    pub role: CertRole,
    pub field_sizes: FieldSizes,
    /// Outer SEQUENCE and TBS headers plus any unique-ID fields.
    pub structural_overhead: u32,
    pub key_algo: KeyAlgo,
    pub key_bits: u32,
    /// DER-encoded Name, compared byte-wise.
    #[serde(with = "hex::serde")]
    pub subject: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub issuer: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub spki_digest: [u8; 32],
    pub self_signed: bool,
    /// Encoded size of the whole subjectAltName extension.
    pub san_bytes: u32,
    pub san_count: u32,
}

impl CertRecord {
    /// Parses one DER certificate. `role` is refined by [`parse_chain`].
    pub fn from_der(der: &[u8]) -> Result<CertRecord, DerError> {
        let p = x509::parse(der)?;
        Ok(CertRecord {
            der: der.to_vec(),
            der_len: der.len() as u32,
            role: if p.self_signed { CertRole::Root } else { CertRole::Leaf },
            field_sizes: p.field_sizes,
            structural_overhead: p.overhead,
            key_algo: p.key_algo,
            key_bits: p.key_bits,
            subject: p.subject,
            issuer: p.issuer,
            spki_digest: p.spki_digest,
            self_signed: p.self_signed,
            san_bytes: p.san_bytes,
            san_count: p.san_count,
        })
    }

    pub fn subject_string(&self) -> String {
        name_to_string(&self.subject)
    }

    pub fn issuer_string(&self) -> String {
        name_to_string(&self.issuer)
    }

    /// Re-encodes the parsed DER tree.
    pub fn reserialize(&self) -> Result<Vec<u8>, DerError> {
        Ok(Node::parse(&self.der)?.encode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChainSource {
    Quic,
    Https,
    #[default]
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub domain: String,
    pub source: ChainSource,
    pub certs: Vec<CertRecord>,
    pub total_len: u32,
    pub ordered_correctly: bool,
    /// SHA-256 over the concatenated non-leaf certificates, hex encoded.
    pub parent_chain_id: String,
}

impl ChainRecord {
    pub fn from_certs(domain: impl Into<String>, source: ChainSource, mut certs: Vec<CertRecord>) -> ChainRecord {
        for (i, c) in certs.iter_mut().enumerate() {
            c.role = match (i, c.self_signed) {
                (_, true) => CertRole::Root,
                (0, false) => CertRole::Leaf,
                _ => CertRole::Intermediate,
            };
        }
        let ordered_correctly = certs.windows(2).all(|w| w[0].issuer == w[1].subject);
        let mut h = Sha256::new();
        certs.iter().skip(1).for_each(|c| h.update(&c.der));
        ChainRecord {
            domain: domain.into(),
            source,
            total_len: certs.iter().map(|c| c.der_len).sum(),
            ordered_correctly,
            parent_chain_id: hex::encode(h.finalize()),
            certs,
        }
    }

    pub fn leaf(&self) -> Option<&CertRecord> {
        self.certs.first()
    }

    pub fn non_leaf_len(&self) -> u32 {
        self.certs.iter().skip(1).map(|c| c.der_len).sum()
    }

    pub fn is_large(&self) -> bool {
        self.total_len > LARGE_CHAIN_BYTES
    }

    pub fn ders(&self) -> impl Iterator<Item = &[u8]> {
        self.certs.iter().map(|c| c.der.as_slice())
    }

    /// Concatenated DER bytes as delivered.
    pub fn to_der(&self) -> Vec<u8> {
        self.ders().flatten().copied().collect()
    }

    pub fn to_pem(&self) -> String {
        let blocks: Vec<pem::Pem> = self.ders().map(|d| pem::Pem::new("CERTIFICATE", d.to_vec())).collect();
        pem::encode_many_config(&blocks, pem::EncodeConfig::new().set_line_ending(pem::LineEnding::LF))
    }
}

/// Parses PEM (any number of CERTIFICATE blocks) or concatenated DER.
pub fn parse_chain(blob: &[u8], domain: &str, source: ChainSource) -> Result<ChainRecord, CertError> {
    let ders = split_certificates(blob)?;
    let certs = ders
        .iter()
        .enumerate()
        .map(|(index, d)| CertRecord::from_der(d).map_err(|source| CertError::Der { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChainRecord::from_certs(domain, source, certs))
}

pub fn split_certificates(blob: &[u8]) -> Result<Vec<Vec<u8>>, CertError> {
    let is_pem = blob.windows(11).any(|w| w == b"-----BEGIN ");
    let ders: Vec<Vec<u8>> = if is_pem {
        pem::parse_many(blob)?
            .into_iter()
            .filter(|p| p.tag() == "CERTIFICATE")
            .map(pem::Pem::into_contents)
            .collect()
    } else {
        let mut r = Reader::new(blob, 0);
        let mut out = Vec::new();
        while !r.is_empty() {
            let index = out.len();
            let t = r.read().map_err(|source| CertError::Der { index, source })?;
            out.push(t.raw.to_vec());
        }
        out
    };
    if ders.is_empty() {
        return Err(CertError::Empty);
    }
    Ok(ders)
}
