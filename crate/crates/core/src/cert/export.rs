//! CSV rows for certificates and chains.

use std::io::Write;

use serde::Serialize;

use super::{detect_cross_signed, detect_included_anchor, ChainRecord, TrustStore};
use crate::trace::InitialSize;

#[derive(Debug, Serialize)]
pub struct CertRow<'a> {
    pub domain: &'a str,
    pub position: usize,
    pub role: &'static str,
    pub der_len: u32,
    pub version: u32,
    pub serial: u32,
    pub signature_algo: u32,
    pub issuer: u32,
    pub validity: u32,
    pub subject: u32,
    pub public_key: u32,
    pub extensions: u32,
    pub signature: u32,
    pub structural_overhead: u32,
    pub key_algo: &'static str,
    pub self_signed: bool,
    pub cross_signed: bool,
    pub san_bytes: u32,
    pub san_count: u32,
    pub subject_name: String,
}

#[derive(Debug, Serialize)]
pub struct ChainRow<'a> {
    pub domain: &'a str,
    pub source: &'static str,
    pub cert_count: usize,
    pub total_len: u32,
    pub non_leaf_len: u32,
    pub ordered_correctly: bool,
    pub large: bool,
    pub included_anchors: usize,
    pub cross_signed: usize,
    pub fits_3x1200: bool,
    pub fits_3x1357: bool,
    pub parent_chain_id: &'a str,
}

pub fn write_cert_csv<'a, W: Write>(
    w: W,
    chains: impl IntoIterator<Item = &'a ChainRecord>,
    store: Option<&TrustStore>,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for chain in chains {
        let cross: Vec<usize> = store.map(|s| detect_cross_signed(chain, s).into_iter().map(|f| f.index).collect()).unwrap_or_default();
        for (i, c) in chain.certs.iter().enumerate() {
            let f = &c.field_sizes;
            out.serialize(CertRow {
                domain: &chain.domain,
                position: i,
                role: c.role.as_str(),
                der_len: c.der_len,
                version: f.version,
                serial: f.serial,
                signature_algo: f.signature_algo,
                issuer: f.issuer,
                validity: f.validity,
                subject: f.subject,
                public_key: f.public_key,
                extensions: f.extensions,
                signature: f.signature,
                structural_overhead: c.structural_overhead,
                key_algo: c.key_algo.as_str(),
                self_signed: c.self_signed,
                cross_signed: cross.contains(&i),
                san_bytes: c.san_bytes,
                san_count: c.san_count,
                subject_name: c.subject_string(),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_chain_csv<'a, W: Write>(
    w: W,
    chains: impl IntoIterator<Item = &'a ChainRecord>,
    store: Option<&TrustStore>,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fits = |chain: &ChainRecord, size: u32| {
        super::limit_fit(chain, InitialSize::new(size).expect("constant in range"), 0).fits
    };
    for chain in chains {
        out.serialize(ChainRow {
            domain: &chain.domain,
            source: match chain.source {
                super::ChainSource::Quic => "QUIC",
                super::ChainSource::Https => "HTTPS",
                super::ChainSource::File => "FILE",
            },
            cert_count: chain.certs.len(),
            total_len: chain.total_len,
            non_leaf_len: chain.non_leaf_len(),
            ordered_correctly: chain.ordered_correctly,
            large: chain.is_large(),
            included_anchors: detect_included_anchor(chain).len(),
            cross_signed: store.map_or(0, |s| detect_cross_signed(chain, s).len()),
            fits_3x1200: fits(chain, 1200),
            fits_3x1357: fits(chain, 1357),
            parent_chain_id: &chain.parent_chain_id,
        })?;
    }
    out.flush()?;
    Ok(())
}
