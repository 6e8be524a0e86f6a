//! RFC 8879 certificate compression.
//!
//! The compressed input is the TLS 1.3 Certificate message body, which is
//! what a CompressedCertificate carries: an empty request context, the
//! 24-bit certificate list length, and per certificate a 24-bit length, the
//! DER bytes and an empty extensions block.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cert::ChainRecord;
use crate::stats::{self, BoxStats};
use crate::trace::InitialSize;

/// Non-certificate handshake bytes assumed in the server's first flight.
pub const DEFAULT_HANDSHAKE_OVERHEAD: u32 = 1100;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("unsupported compression algorithm {0:?} (expected zlib, brotli or zstd)")]
    Unsupported(String),
    #[error("malformed Certificate message at byte {0}")]
    Malformed(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Zlib,
    Brotli,
    Zstd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Zlib, Algorithm::Brotli, Algorithm::Zstd];

    /// CertificateCompressionAlgorithm code point.
    pub fn code_point(self) -> u16 {
        match self {
            Algorithm::Zlib => 1,
            Algorithm::Brotli => 2,
            Algorithm::Zstd => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Zlib => "zlib",
            Algorithm::Brotli => "brotli",
            Algorithm::Zstd => "zstd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = CompressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CompressError::Unsupported(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Levels {
    pub zlib: u32,
    pub brotli_quality: u32,
    pub brotli_window: u32,
    pub zstd: i32,
}

impl Default for Levels {
    fn default() -> Self {
        Levels { zlib: 9, brotli_quality: 11, brotli_window: 22, zstd: 22 }
    }
}

pub fn certificate_message<'a>(ders: impl IntoIterator<Item = &'a [u8]>) -> Vec<u8> {
    let mut entries = Vec::new();
    for d in ders {
        entries.extend_from_slice(&(d.len() as u32).to_be_bytes()[1..]);
        entries.extend_from_slice(d);
        entries.extend_from_slice(&[0, 0]);
    }
    let mut msg = Vec::with_capacity(entries.len() + 4);
    msg.push(0);
    msg.extend_from_slice(&(entries.len() as u32).to_be_bytes()[1..]);
    msg.extend_from_slice(&entries);
    msg
}

/// Splits a Certificate message body back into DER certificates.
pub fn parse_certificate_message(msg: &[u8]) -> Result<Vec<Vec<u8>>, CompressError> {
    let u24 = |at: usize| -> Result<usize, CompressError> {
        msg.get(at..at + 3)
            .map(|b| (usize::from(b[0]) << 16) | (usize::from(b[1]) << 8) | usize::from(b[2]))
            .ok_or(CompressError::Malformed(at))
    };
    let ctx = usize::from(*msg.first().ok_or(CompressError::Malformed(0))?);
    let mut at = 1 + ctx;
    let list_end = at + 3 + u24(at)?;
    if list_end != msg.len() {
        return Err(CompressError::Malformed(at));
    }
    at += 3;
    let mut out = Vec::new();
    while at < list_end {
        let len = u24(at)?;
        let der = msg.get(at + 3..at + 3 + len).ok_or(CompressError::Malformed(at))?;
        out.push(der.to_vec());
        at += 3 + len;
        let ext = msg.get(at..at + 2).ok_or(CompressError::Malformed(at))?;
        at += 2 + (usize::from(ext[0]) << 8 | usize::from(ext[1]));
    }
    if at != list_end {
        return Err(CompressError::Malformed(at));
    }
    Ok(out)
}

pub fn compress(algorithm: Algorithm, data: &[u8], levels: &Levels) -> Result<Vec<u8>, CompressError> {
    Ok(match algorithm {
        Algorithm::Zlib => {
            let mut e = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::new(levels.zlib));
            e.write_all(data)?;
            e.finish()?
        }
        Algorithm::Brotli => {
            let params = brotli::enc::BrotliEncoderParams {
                quality: levels.brotli_quality as i32,
                lgwin: levels.brotli_window as i32,
                ..Default::default()
            };
            let mut out = Vec::new();
            brotli::BrotliCompress(&mut &data[..], &mut out, &params)?;
            out
        }
        Algorithm::Zstd => zstd::bulk::compress(data, levels.zstd)?,
    })
}

pub fn decompress(algorithm: Algorithm, data: &[u8]) -> Result<Vec<u8>, CompressError> {
    let mut out = Vec::new();
    match algorithm {
        Algorithm::Zlib => {
            flate2::read::ZlibDecoder::new(data).read_to_end(&mut out)?;
        }
        Algorithm::Brotli => {
            brotli::BrotliDecompress(&mut &data[..], &mut out)?;
        }
        Algorithm::Zstd => {
            zstd::stream::copy_decode(data, &mut out)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionOutcome {
    pub algorithm: Algorithm,
    pub original_len: u32,
    pub compressed_len: u32,
    /// Size reduction, `1 - compressed/original`; negative on expansion.
    pub ratio: f64,
    /// Remaining size, `compressed/original`.
    pub remaining: f64,
    /// Initial size to whether `compressed_len + overhead <= 3 * size`.
    pub fits_under: BTreeMap<u32, bool>,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

impl CompressionOutcome {
    /// Decompresses the payload and returns the DER certificates.
    pub fn restore(&self) -> Result<Vec<Vec<u8>>, CompressError> {
        parse_certificate_message(&decompress(self.algorithm, &self.payload)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    pub levels: Levels,
    pub budgets: Vec<InitialSize>,
    pub overhead: u32,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            levels: Levels::default(),
            budgets: [1200, 1357].map(|s| InitialSize::new(s).expect("constant in range")).to_vec(),
            overhead: DEFAULT_HANDSHAKE_OVERHEAD,
        }
    }
}

pub fn compress_ders<'a>(
    ders: impl IntoIterator<Item = &'a [u8]>,
    algorithm: Algorithm,
    cfg: &CompressionConfig,
) -> Result<CompressionOutcome, CompressError> {
    let msg = certificate_message(ders);
    let payload = compress(algorithm, &msg, &cfg.levels)?;
    let (o, c) = (msg.len() as u32, payload.len() as u32);
    let fits_under = cfg
        .budgets
        .iter()
        .map(|b| (b.get(), u64::from(c) + u64::from(cfg.overhead) <= b.budget()))
        .collect();
    Ok(CompressionOutcome {
        algorithm,
        original_len: o,
        compressed_len: c,
        ratio: 1.0 - f64::from(c) / f64::from(o),
        remaining: f64::from(c) / f64::from(o),
        fits_under,
        payload,
    })
}

pub fn compress_chain(chain: &ChainRecord, algorithm: Algorithm, cfg: &CompressionConfig) -> Result<CompressionOutcome, CompressError> {
    compress_ders(chain.ders(), algorithm, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub chains: usize,
    pub ratio: Option<BoxStats>,
    pub median_remaining: Option<f64>,
    /// Initial size to the number of chains that fit.
    pub fit_counts: BTreeMap<u32, usize>,
    pub fit_fractions: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub overhead: u32,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl CompressionReport {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }
}

pub fn summarize(algorithm: Algorithm, outcomes: &[CompressionOutcome], budgets: &[InitialSize], overhead: u32) -> AlgorithmSummary {
    let ratios: Vec<f64> = outcomes.iter().map(|o| o.ratio).collect();
    let remaining: Vec<f64> = outcomes.iter().map(|o| o.remaining).collect();
    let mut fit_counts = BTreeMap::new();
    let mut fit_fractions = BTreeMap::new();
    for b in budgets {
        let n = outcomes
            .iter()
            .filter(|o| u64::from(o.compressed_len) + u64::from(overhead) <= b.budget())
            .count();
        fit_counts.insert(b.get(), n);
        fit_fractions.insert(b.get(), if outcomes.is_empty() { 0.0 } else { n as f64 / outcomes.len() as f64 });
    }
    AlgorithmSummary {
        algorithm,
        chains: outcomes.len(),
        ratio: BoxStats::from_values(&ratios),
        median_remaining: stats::median(&remaining),
        fit_counts,
        fit_fractions,
    }
}

pub fn compression_report<'a>(
    chains: impl IntoIterator<Item = &'a ChainRecord>,
    algorithms: &[Algorithm],
    cfg: &CompressionConfig,
) -> Result<CompressionReport, CompressError> {
    let chains: Vec<&ChainRecord> = chains.into_iter().collect();
    let mut out = Vec::new();
    for &a in algorithms {
        let outcomes = chains.iter().map(|c| compress_chain(c, a, cfg)).collect::<Result<Vec<_>, _>>()?;
        out.push(summarize(a, &outcomes, &cfg.budgets, cfg.overhead));
    }
    Ok(CompressionReport { overhead: cfg.overhead, algorithms: out })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    domain: &'a str,
    algorithm: &'static str,
    original_len: u32,
    compressed_len: u32,
    ratio: f64,
    remaining: f64,
    fits_3x1200: bool,
    fits_3x1357: bool,
}

/// One row per chain and algorithm; fit columns use `overhead`.
pub fn write_csv<'a, W: Write>(
    w: W,
    rows: impl IntoIterator<Item = (&'a str, &'a CompressionOutcome)>,
    overhead: u32,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (domain, o) in rows {
        let fits = |size: u64| u64::from(o.compressed_len) + u64::from(overhead) <= 3 * size;
        out.serialize(CsvRow {
            domain,
            algorithm: o.algorithm.as_str(),
            original_len: o.original_len,
            compressed_len: o.compressed_len,
            ratio: o.ratio,
            remaining: o.remaining,
            fits_3x1200: fits(1200),
            fits_3x1357: fits(1357),
        })?;
    }
    out.flush()?;
    Ok(())
}
