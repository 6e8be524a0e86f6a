//! Telescope backscatter sessions and their amplification factors.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::net::IpAddr;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::BoxStats;
use crate::trace::{ConnectionId, InitialSize};

pub const OTHER_PROVIDER: &str = "OTHER";
pub const DEFAULT_SESSION_GAP_US: u64 = 300_000_000;
pub const DEFAULT_ASSUMED_INITIAL: u32 = 1362;

#[derive(Debug, Error)]
pub enum BackscatterError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("prefix file row {row}: {msg}")]
    Prefix { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackscatterRecord {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub time_us: u64,
    pub udp_len: u32,
    pub scid: ConnectionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_label: Option<String>,
}

/// Longest-prefix map from source address to provider name.
#[derive(Debug, Clone, Default)]
pub struct PrefixMap {
    entries: Vec<(IpNet, String)>,
}

impl PrefixMap {
    pub fn new(entries: impl IntoIterator<Item = (IpNet, String)>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().map(|(n, p)| (n.trunc(), p)).collect();
        entries.sort_by(|a, b| b.0.prefix_len().cmp(&a.0.prefix_len()).then_with(|| a.0.cmp(&b.0)));
        PrefixMap { entries }
    }

    /// Reads `prefix,provider` rows; a header row is optional.
    pub fn from_csv<R: Read>(r: R) -> Result<Self, BackscatterError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
        let mut entries = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let (Some(prefix), Some(provider)) = (rec.get(0), rec.get(1)) else {
                return Err(BackscatterError::Prefix { row: row + 1, msg: "expected prefix,provider".into() });
            };
            match prefix.parse::<IpNet>() {
                Ok(net) => entries.push((net, provider.to_owned())),
                Err(_) if row == 0 => continue,
                Err(e) => return Err(BackscatterError::Prefix { row: row + 1, msg: e.to_string() }),
            }
        }
        Ok(Self::new(entries))
    }

    pub fn lookup(&self, ip: IpAddr) -> Option<&str> {
        self.entries.iter().find(|(n, _)| n.contains(&ip)).map(|(_, p)| p.as_str())
    }

    /// Provider for a record: its own label, then the prefix map, then `OTHER`.
    pub fn provider_of<'a>(&'a self, rec: &'a BackscatterRecord) -> &'a str {
        rec.provider_label.as_deref().or_else(|| self.lookup(rec.src_ip)).unwrap_or(OTHER_PROVIDER)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub provider: String,
    pub scid: ConnectionId,
    pub total_bytes: u64,
    pub records: usize,
    pub first_us: u64,
    pub last_us: u64,
}

impl Session {
    pub fn duration_s(&self) -> f64 {
        (self.last_us - self.first_us) as f64 / 1e6
    }
}

/// Groups records by `(provider, scid)`, splitting when consecutive records
/// are more than `gap_us` apart. Output is sorted by key and start time.
pub fn sessionize(records: &[BackscatterRecord], prefixes: &PrefixMap, gap_us: u64) -> Vec<Session> {
    let mut keyed: Vec<(&str, &ConnectionId, u64, u32)> =
        records.iter().map(|r| (prefixes.provider_of(r), &r.scid, r.time_us, r.udp_len)).collect();
    keyed.sort_unstable();
    let mut out: Vec<Session> = Vec::new();
    for (provider, scid, t, len) in keyed {
        match out.last_mut() {
            Some(s) if s.provider == provider && &s.scid == scid && t - s.last_us <= gap_us => {
                s.total_bytes += u64::from(len);
                s.records += 1;
                s.last_us = t;
            }
            _ => out.push(Session {
                provider: provider.to_owned(),
                scid: scid.clone(),
                total_bytes: u64::from(len),
                records: 1,
                first_us: t,
                last_us: t,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderDistribution {
    pub provider: String,
    pub sessions: usize,
    pub factor: BoxStats,
    pub duration_s: BoxStats,
}

pub fn session_factor(session: &Session, assumed_initial: InitialSize) -> f64 {
    session.total_bytes as f64 / f64::from(assumed_initial.get())
}

pub fn amplification_distribution(sessions: &[Session], assumed_initial: InitialSize) -> Vec<ProviderDistribution> {
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in sessions {
        let e = by.entry(&s.provider).or_default();
        e.0.push(session_factor(s, assumed_initial));
        e.1.push(s.duration_s());
    }
    by.into_iter()
        .filter_map(|(p, (f, d))| {
            Some(ProviderDistribution {
                provider: p.to_owned(),
                sessions: f.len(),
                factor: BoxStats::from_values(&f)?,
                duration_s: BoxStats::from_values(&d)?,
            })
        })
        .collect()
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<BackscatterRecord>, BackscatterError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| BackscatterError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[BackscatterRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CsvRecord {
    src_ip: IpAddr,
    dst_ip: IpAddr,
    time_us: u64,
    udp_len: u32,
    scid: String,
    #[serde(default)]
    provider_label: Option<String>,
}

/// Reads CSV with columns `src_ip,dst_ip,time_us,udp_len,scid[,provider_label]`.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<BackscatterRecord>, BackscatterError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRecord>() {
        let row = row?;
        let scid = hex::decode(&row.scid).map_err(|e| BackscatterError::Prefix { row: out.len() + 1, msg: e.to_string() })?;
        out.push(BackscatterRecord {
            src_ip: row.src_ip,
            dst_ip: row.dst_ip,
            time_us: row.time_us,
            udp_len: row.udp_len,
            scid: ConnectionId(scid),
            provider_label: row.provider_label.filter(|p| !p.is_empty()),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    provider: &'a str,
    sessions: usize,
    factor_min: f64,
    factor_q1: f64,
    factor_median: f64,
    factor_q3: f64,
    factor_max: f64,
    factor_mean: f64,
    duration_median_s: f64,
    duration_max_s: f64,
}

pub fn write_summary_csv<W: Write>(w: W, dist: &[ProviderDistribution]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for d in dist {
        out.serialize(SummaryRow {
            provider: &d.provider,
            sessions: d.sessions,
            factor_min: d.factor.min,
            factor_q1: d.factor.q1,
            factor_median: d.factor.median,
            factor_q3: d.factor.q3,
            factor_max: d.factor.max,
            factor_mean: d.factor.mean,
            duration_median_s: d.duration_s.median,
            duration_max_s: d.duration_s.max,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SessionRow<'a> {
    provider: &'a str,
    scid: String,
    total_bytes: u64,
    records: usize,
    first_us: u64,
    last_us: u64,
    duration_s: f64,
    factor: f64,
}

pub fn write_sessions_csv<W: Write>(w: W, sessions: &[Session], assumed_initial: InitialSize) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in sessions {
        out.serialize(SessionRow {
            provider: &s.provider,
            scid: s.scid.to_string(),
            total_bytes: s.total_bytes,
            records: s.records,
            first_us: s.first_us,
            last_us: s.last_us,
            duration_s: s.duration_s(),
            factor: session_factor(s, assumed_initial),
        })?;
    }
    out.flush()?;
    Ok(())
}
