//! Per-domain scan records, their CSV/JSONL schema and rank-group aggregation.
//!
//! The CSV schema is flat and versioned through the `schema_version` column.
//! Columns, in order: `schema_version, domain, rank, initial_size,
//! dns_status, dns_addresses, https_reachable, quic_reachable, quic_outcome,
//! class, amplification_factor, pre_validation_server_bytes,
//! pre_validation_client_bytes, client_flights, limit_exceeded,
//! multi_rtt_flag, chain_ref, chain_total_len, started_unix_ms,
//! finished_unix_ms, error`. `dns_addresses` is space separated; empty cells
//! mean "absent".

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cert::ChainRecord;
use crate::stats;
use crate::trace::{ClassificationResult, HandshakeClass, TraceOutcome};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RANK_GROUP: u64 = 100_000;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record for {domain}: {msg}")]
    Invalid { domain: String, msg: &'static str },
    #[error("schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DnsStatus {
    ARecord,
    Servfail,
    Nxdomain,
    Timeout,
    Refused,
}

impl DnsStatus {
    pub const ALL: [DnsStatus; 5] = [Self::ARecord, Self::Servfail, Self::Nxdomain, Self::Timeout, Self::Refused];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ARecord => "A_RECORD",
            Self::Servfail => "SERVFAIL",
            Self::Nxdomain => "NXDOMAIN",
            Self::Timeout => "TIMEOUT",
            Self::Refused => "REFUSED",
        }
    }

    pub fn parse(s: &str) -> Option<DnsStatus> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsOutcome {
    pub status: DnsStatus,
    #[serde(default)]
    pub addresses: Vec<Ipv4Addr>,
}

impl DnsOutcome {
    pub fn resolved(addresses: Vec<Ipv4Addr>) -> Self {
        DnsOutcome { status: DnsStatus::ARecord, addresses }
    }

    pub fn failed(status: DnsStatus) -> Self {
        DnsOutcome { status, addresses: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub schema_version: u32,
    pub domain: String,
    pub rank: u64,
    pub initial_size: u32,
    pub dns: DnsOutcome,
    pub https_reachable: bool,
    pub quic_reachable: bool,
    pub quic_outcome: Option<TraceOutcome>,
    pub quic_class: Option<ClassificationResult>,
    pub chain_ref: Option<String>,
    pub chain_total_len: Option<u32>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub error: Option<String>,
}

impl ScanRecord {
    pub fn new(domain: impl Into<String>, rank: u64, initial_size: u32, dns: DnsOutcome) -> Self {
        ScanRecord {
            schema_version: SCHEMA_VERSION,
            domain: domain.into(),
            rank,
            initial_size,
            dns,
            https_reachable: false,
            quic_reachable: false,
            quic_outcome: None,
            quic_class: None,
            chain_ref: None,
            chain_total_len: None,
            started_unix_ms: 0,
            finished_unix_ms: 0,
            error: None,
        }
    }

    pub fn probe_attempted(&self) -> bool {
        self.quic_outcome.is_some()
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let bad = |msg| Err(RecordError::Invalid { domain: self.domain.clone(), msg });
        if self.schema_version != SCHEMA_VERSION {
            return Err(RecordError::Schema { found: self.schema_version });
        }
        if self.rank == 0 {
            return bad("rank must be at least 1");
        }
        if self.probe_attempted() && self.quic_class.is_some() == self.error.is_some() {
            return bad("an attempted probe needs exactly one of quic_class and error");
        }
        if self.finished_unix_ms < self.started_unix_ms {
            return bad("finished before started");
        }
        Ok(())
    }
}

/// Column order of the records CSV.
pub const CSV_COLUMNS: [&str; 21] = [
    "schema_version",
    "domain",
    "rank",
    "initial_size",
    "dns_status",
    "dns_addresses",
    "https_reachable",
    "quic_reachable",
    "quic_outcome",
    "class",
    "amplification_factor",
    "pre_validation_server_bytes",
    "pre_validation_client_bytes",
    "client_flights",
    "limit_exceeded",
    "multi_rtt_flag",
    "chain_ref",
    "chain_total_len",
    "started_unix_ms",
    "finished_unix_ms",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    schema_version: u32,
    domain: String,
    rank: u64,
    initial_size: u32,
    dns_status: String,
    dns_addresses: String,
    https_reachable: bool,
    quic_reachable: bool,
    quic_outcome: Option<String>,
    class: Option<String>,
    #[serde(deserialize_with = "exact_f64")]
    amplification_factor: Option<f64>,
    pre_validation_server_bytes: Option<u64>,
    pre_validation_client_bytes: Option<u64>,
    client_flights: Option<u32>,
    limit_exceeded: Option<bool>,
    multi_rtt_flag: Option<bool>,
    chain_ref: Option<String>,
    chain_total_len: Option<u32>,
    started_unix_ms: u64,
    finished_unix_ms: u64,
    error: Option<String>,
}

/// Parses through `str::parse`, which rounds correctly.
fn exact_f64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.filter(|s| !s.is_empty()).map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

impl From<&ScanRecord> for CsvRow {
    fn from(r: &ScanRecord) -> Self {
        let c = r.quic_class.as_ref();
        CsvRow {
            schema_version: r.schema_version,
            domain: r.domain.clone(),
            rank: r.rank,
            initial_size: r.initial_size,
            dns_status: r.dns.status.as_str().to_owned(),
            dns_addresses: r.dns.addresses.iter().map(Ipv4Addr::to_string).collect::<Vec<_>>().join(" "),
            https_reachable: r.https_reachable,
            quic_reachable: r.quic_reachable,
            quic_outcome: r.quic_outcome.map(|o| o.as_str().to_owned()),
            class: c.map(|c| c.klass.as_str().to_owned()),
            amplification_factor: c.map(|c| c.amplification_factor),
            pre_validation_server_bytes: c.map(|c| c.pre_validation_server_bytes),
            pre_validation_client_bytes: c.map(|c| c.pre_validation_client_bytes),
            client_flights: c.map(|c| c.client_flights),
            limit_exceeded: c.map(|c| c.limit_exceeded),
            multi_rtt_flag: c.map(|c| c.multi_rtt_flag),
            chain_ref: r.chain_ref.clone(),
            chain_total_len: r.chain_total_len,
            started_unix_ms: r.started_unix_ms,
            finished_unix_ms: r.finished_unix_ms,
            error: r.error.clone(),
        }
    }
}

impl CsvRow {
    fn into_record(self, row: usize) -> Result<ScanRecord, RecordError> {
        let err = |msg: String| RecordError::Row { row, msg };
        if self.schema_version != SCHEMA_VERSION {
            return Err(RecordError::Schema { found: self.schema_version });
        }
        let status = DnsStatus::parse(&self.dns_status).ok_or_else(|| err(format!("dns_status {:?}", self.dns_status)))?;
        let addresses = self
            .dns_addresses
            .split_whitespace()
            .map(|a| a.parse().map_err(|_| err(format!("address {a:?}"))))
            .collect::<Result<_, _>>()?;
        let quic_outcome = match self.quic_outcome.as_deref() {
            None => None,
            Some(s) => Some(
                serde_json::from_value(serde_json::Value::String(s.to_owned()))
                    .map_err(|_| err(format!("quic_outcome {s:?}")))?,
            ),
        };
        let quic_class = match self.class {
            None => None,
            Some(k) => {
                let missing = || err("incomplete classification columns".to_owned());
                Some(ClassificationResult {
                    klass: k.parse::<HandshakeClass>().map_err(err)?,
                    amplification_factor: self.amplification_factor.ok_or_else(missing)?,
                    pre_validation_server_bytes: self.pre_validation_server_bytes.ok_or_else(missing)?,
                    pre_validation_client_bytes: self.pre_validation_client_bytes.ok_or_else(missing)?,
                    client_flights: self.client_flights.ok_or_else(missing)?,
                    limit_exceeded: self.limit_exceeded.ok_or_else(missing)?,
                    multi_rtt_flag: self.multi_rtt_flag.ok_or_else(missing)?,
                })
            }
        };
        Ok(ScanRecord {
            schema_version: self.schema_version,
            domain: self.domain,
            rank: self.rank,
            initial_size: self.initial_size,
            dns: DnsOutcome { status, addresses },
            https_reachable: self.https_reachable,
            quic_reachable: self.quic_reachable,
            quic_outcome,
            quic_class,
            chain_ref: self.chain_ref,
            chain_total_len: self.chain_total_len,
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: self.finished_unix_ms,
            error: self.error,
        })
    }
}

pub fn write_csv<W: Write>(w: W, records: &[ScanRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        out.serialize(CsvRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ScanRecord>, RecordError> {
    csv::Reader::from_reader(r)
        .deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| row?.into_record(i + 1))
        .collect()
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[ScanRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ScanRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScanRecord = serde_json::from_str(&line).map_err(|source| RecordError::Json { line: i + 1, source })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(RecordError::Schema { found: rec.schema_version });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ExportFormat::Csv => "records.csv",
            ExportFormat::Jsonl => "records.jsonl",
        }
    }
}

/// Writes `path` through a temporary sibling file so a failed write leaves
/// any previous file untouched.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), RecordError> {
    let io = |source| RecordError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut buf).map_err(io)?;
        buf.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Exports records into `dir`; returns the written paths.
pub fn export(records: &[ScanRecord], dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>, RecordError> {
    std::fs::create_dir_all(dir).map_err(|source| RecordError::Io { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for &fmt in formats {
        let path = dir.join(fmt.file_name());
        write_atomic(&path, |w| match fmt {
            ExportFormat::Csv => write_csv(w, records).map_err(std::io::Error::other),
            ExportFormat::Jsonl => write_jsonl(w, records),
        })?;
        out.push(path);
    }
    Ok(out)
}

/// File name used for a domain's PEM bundle.
pub fn pem_bundle_name(domain: &str) -> String {
    let safe: String = domain
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.pem")
}

/// Writes one PEM bundle per chain under `dir`; returns the relative names.
pub fn write_pem_bundles<'a>(dir: &Path, chains: impl IntoIterator<Item = &'a ChainRecord>) -> Result<Vec<String>, RecordError> {
    std::fs::create_dir_all(dir).map_err(|source| RecordError::Io { path: dir.to_path_buf(), source })?;
    let mut names = Vec::new();
    for c in chains {
        let name = pem_bundle_name(&c.domain);
        write_atomic(&dir.join(&name), |w| w.write_all(c.to_pem().as_bytes()))?;
        names.push(name);
    }
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroup {
    pub group: u64,
    pub rank_from: u64,
    pub rank_to: u64,
    pub domains: usize,
    pub quic_share: f64,
    pub https_only_share: f64,
    /// Class name to share among classified records of the group.
    pub class_shares: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGroupSummary {
    pub groups: Vec<RankGroup>,
    pub mean_quic_share: f64,
    pub std_quic_share: f64,
}

pub fn rank_group_summary(records: &[ScanRecord], group_size: u64) -> RankGroupSummary {
    let group_size = group_size.max(1);
    let mut by: BTreeMap<u64, Vec<&ScanRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.rank >= 1) {
        by.entry((r.rank - 1) / group_size).or_default().push(r);
    }
    let groups: Vec<RankGroup> = by
        .into_iter()
        .map(|(g, rs)| {
            let n = rs.len() as f64;
            let classified: Vec<_> = rs.iter().filter_map(|r| r.quic_class.as_ref()).collect();
            let mut class_shares = BTreeMap::new();
            for k in HandshakeClass::ALL {
                let c = classified.iter().filter(|c| c.klass == k).count();
                if !classified.is_empty() {
                    class_shares.insert(k.as_str().to_owned(), c as f64 / classified.len() as f64);
                }
            }
            RankGroup {
                group: g,
                rank_from: g * group_size + 1,
                rank_to: (g + 1) * group_size,
                domains: rs.len(),
                quic_share: rs.iter().filter(|r| r.quic_reachable).count() as f64 / n,
                https_only_share: rs.iter().filter(|r| r.https_reachable && !r.quic_reachable).count() as f64 / n,
                class_shares,
            }
        })
        .collect();
    let shares: Vec<f64> = groups.iter().map(|g| g.quic_share).collect();
    RankGroupSummary {
        mean_quic_share: stats::mean(&shares).unwrap_or(0.0),
        std_quic_share: stats::std_dev(&shares).unwrap_or(0.0),
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rank: u64, quic: bool, https: bool) -> ScanRecord {
        let mut r = ScanRecord::new(format!("d{rank}.test"), rank, 1362, DnsOutcome::resolved(vec![Ipv4Addr::LOCALHOST]));
        r.quic_reachable = quic;
        r.https_reachable = https;
        r
    }

    #[test]
    fn empty_csv_has_the_same_header() {
        let mut empty = Vec::new();
        write_csv(&mut empty, &[]).unwrap();
        let mut one = Vec::new();
        write_csv(&mut one, &[rec(1, true, true)]).unwrap();
        let header = String::from_utf8(one).unwrap().lines().next().unwrap().to_string();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), header);
        assert!(read_csv(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn validation() {
        let mut r = rec(1, true, true);
        assert!(r.validate().is_ok());
        r.quic_outcome = Some(TraceOutcome::Completed);
        assert!(r.validate().is_err());
        r.error = Some("boom".into());
        assert!(r.validate().is_ok());
        r.rank = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn two_groups_exact_shares() {
        let mut rs = Vec::new();
        for rank in 1..=10 {
            rs.push(rec(rank, rank <= 3, true));
        }
        for rank in 11..=20 {
            rs.push(rec(rank, rank <= 16, rank <= 18));
        }
        let s = rank_group_summary(&rs, 10);
        assert_eq!(s.groups.len(), 2);
        assert_eq!((s.groups[0].quic_share, s.groups[0].https_only_share), (0.3, 0.7));
        assert_eq!((s.groups[1].quic_share, s.groups[1].https_only_share), (0.6, 0.2));
        assert!((s.mean_quic_share - 0.45).abs() < 1e-12);
        assert!((s.std_quic_share - 0.15).abs() < 1e-12);
    }

    #[test]
    fn bundle_names_are_safe() {
        assert_eq!(pem_bundle_name("a.example/../x"), "a.example_.._x.pem");
    }
}
