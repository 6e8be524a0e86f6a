//! Multi-domain measurement campaign: resolve, collect HTTPS chains, probe
//! QUIC, checkpoint every record, export at the end.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use quicaudit_core::cert::export::{write_chain_csv, write_cert_csv};
use quicaudit_core::cert::{parse_chain, ChainRecord, ChainSource};
use quicaudit_core::records::{
    export, rank_group_summary, write_atomic, write_pem_bundles, DnsOutcome, DnsStatus, ExportFormat, ScanRecord,
    DEFAULT_RANK_GROUP,
};
use quicaudit_core::{InitialSize, LimitPolicy};
use quicaudit_probe::dns::{resolve_with, DnsConfig};
use quicaudit_probe::https::{collect_https_chain, HttpsConfig};
use quicaudit_probe::{apply_probe, probe_once, unix_ms, ProbeConfig, ProbeMode, TransportKind};
use thiserror::Error;
use tokio::sync::{mpsc, Mutex, Semaphore};
use tokio::task::JoinSet;

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const CHAINS_DIR: &str = "chains";
pub const DEFAULT_CONCURRENCY: usize = 64;
pub const DEFAULT_SPACING: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("domain list row {row}: {msg}")]
    DomainList { row: usize, msg: String },
    #[error("invalid stages {0:?}; expected a comma list of dns, https, quic")]
    Stages(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Record(#[from] quicaudit_core::records::RecordError),
}

impl CampaignError {
    /// Errors caused by the invocation rather than by the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::DomainList { .. } | Self::Stages(_) | Self::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub dns: bool,
    pub https: bool,
    pub quic: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { dns: true, https: true, quic: true }
    }
}

impl FromStr for Stages {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut st = Stages { dns: false, https: false, quic: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "dns" => st.dns = true,
                "https" => st.https = true,
                "quic" => st.quic = true,
                _ => return Err(CampaignError::Stages(s.to_string())),
            }
        }
        if !(st.dns || st.https || st.quic) {
            return Err(CampaignError::Stages(s.to_string()));
        }
        Ok(st)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainEntry {
    pub rank: u64,
    pub domain: String,
}

/// Reads `rank,domain` rows. A non-numeric first row is treated as a header.
pub fn read_domains(r: impl Read) -> Result<Vec<DomainEntry>, CampaignError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CampaignError::DomainList { row, msg: e.to_string() })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let (Some(rank), Some(domain)) = (rec.get(0), rec.get(1)) else {
            return Err(CampaignError::DomainList { row, msg: "expected rank,domain".into() });
        };
        let rank = match rank.parse::<u64>() {
            Ok(0) => return Err(CampaignError::DomainList { row, msg: "rank must be at least 1".into() }),
            Ok(r) => r,
            Err(_) if row == 1 => continue,
            Err(e) => return Err(CampaignError::DomainList { row, msg: format!("rank: {e}") }),
        };
        let domain = domain.trim_end_matches('.').to_ascii_lowercase();
        if domain.is_empty() {
            return Err(CampaignError::DomainList { row, msg: "empty domain".into() });
        }
        out.push(DomainEntry { rank, domain });
    }
    Ok(out)
}

pub fn read_domains_file(path: &Path) -> Result<Vec<DomainEntry>, CampaignError> {
    let f = File::open(path).map_err(|source| CampaignError::Io { path: path.to_path_buf(), source })?;
    read_domains(f)
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub out_dir: PathBuf,
    pub stages: Stages,
    pub sizes: Vec<InitialSize>,
    /// Minimum gap between QUIC probes of the same domain.
    pub spacing: Duration,
    pub concurrency: usize,
    pub dns: DnsConfig,
    pub https: HttpsConfig,
    pub quic_port: u16,
    pub transport: TransportKind,
    pub mode: ProbeMode,
    pub timeout: Duration,
    pub window: Duration,
    pub policy: LimitPolicy,
}

impl CampaignConfig {
    pub fn new(out_dir: impl Into<PathBuf>, dns: DnsConfig) -> Self {
        CampaignConfig {
            out_dir: out_dir.into(),
            stages: Stages::default(),
            sizes: vec![InitialSize::new(1362).expect("constant in range")],
            spacing: DEFAULT_SPACING,
            concurrency: DEFAULT_CONCURRENCY,
            dns,
            https: HttpsConfig::default(),
            quic_port: 443,
            transport: TransportKind::Quic,
            mode: ProbeMode::Complete,
            timeout: quicaudit_probe::config::DEFAULT_TIMEOUT,
            window: quicaudit_probe::config::DEFAULT_WINDOW,
            policy: LimitPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.sizes.is_empty() {
            return Err(CampaignError::Config("at least one Initial size is required".into()));
        }
        if self.concurrency == 0 {
            return Err(CampaignError::Config("concurrency must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(CampaignError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignSummary {
    pub domains: usize,
    /// Records in the final export.
    pub records: usize,
    /// Records taken from an earlier run's checkpoint.
    pub resumed: usize,
    /// Probes or stages that failed for local reasons (I/O, TLS setup).
    pub failures: usize,
    pub outputs: Vec<PathBuf>,
}

type Key = (String, u32);

fn key(r: &ScanRecord) -> Key {
    (r.domain.clone(), r.initial_size)
}

/// Reads a checkpoint, tolerating a torn final line.
pub fn read_checkpoint(path: &Path) -> Result<Vec<ScanRecord>, CampaignError> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(CampaignError::Io { path: path.to_path_buf(), source }),
    };
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| CampaignError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScanRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => {}
            Err(e) => {
                return Err(CampaignError::Io {
                    path: path.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
                })
            }
        }
    }
    Ok(out)
}

struct Shared {
    cfg: CampaignConfig,
    done: HashSet<Key>,
    last_probe_ms: Mutex<HashMap<String, u64>>,
    tx: mpsc::Sender<ScanRecord>,
    chains_dir: PathBuf,
}

pub async fn run_campaign(domains: &[DomainEntry], cfg: &CampaignConfig) -> Result<CampaignSummary, CampaignError> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CampaignError::Io { path, source }
    };
    let chains_dir = out_dir.join(CHAINS_DIR);
    std::fs::create_dir_all(&chains_dir).map_err(io(&chains_dir))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let previous = read_checkpoint(&checkpoint)?;
    rewrite_checkpoint(&checkpoint, &previous)?;
    let done: HashSet<Key> = previous.iter().map(key).collect();
    let mut last_probe = HashMap::new();
    for r in previous.iter().filter(|r| r.quic_outcome.is_some()) {
        let e = last_probe.entry(r.domain.clone()).or_insert(0);
        *e = (*e).max(r.started_unix_ms);
    }

    let (tx, mut rx) = mpsc::channel::<ScanRecord>(256);
    let file = OpenOptions::new().append(true).create(true).open(&checkpoint).map_err(io(&checkpoint))?;
    let writer = tokio::task::spawn_blocking(move || -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(file);
        while let Some(r) = rx.blocking_recv() {
            serde_json::to_writer(&mut w, &r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        w.get_ref().sync_all()
    });

    let shared = Arc::new(Shared {
        cfg: cfg.clone(),
        done,
        last_probe_ms: Mutex::new(last_probe),
        tx,
        chains_dir,
    });
    let permits = Arc::new(Semaphore::new(cfg.concurrency));
    let mut tasks = JoinSet::new();
    let mut seen = HashSet::new();
    for entry in domains.iter().filter(|e| seen.insert(e.domain.clone())) {
        let (shared, permits, entry) = (shared.clone(), permits.clone(), entry.clone());
        tasks.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            run_domain(&entry, &shared).await
        });
    }
    let mut failures = 0;
    while let Some(r) = tasks.join_next().await {
        failures += r.unwrap_or(1);
    }
    drop(shared);
    writer
        .await
        .map_err(|e| CampaignError::Config(format!("checkpoint writer: {e}")))?
        .map_err(io(&checkpoint))?;

    let mut by_key: BTreeMap<(u64, Key), ScanRecord> = BTreeMap::new();
    for r in read_checkpoint(&checkpoint)? {
        by_key.insert((r.rank, key(&r)), r);
    }
    let records: Vec<ScanRecord> = by_key.into_values().collect();
    let mut outputs = export(&records, &out_dir, &[ExportFormat::Csv, ExportFormat::Jsonl])?;
    outputs.extend(write_chain_exports(&records, &out_dir)?);
    let groups = out_dir.join("rank_groups.json");
    let summary = rank_group_summary(&records, DEFAULT_RANK_GROUP);
    write_atomic(&groups, |w| serde_json::to_writer_pretty(w, &summary).map_err(std::io::Error::other))?;
    outputs.push(groups);
    Ok(CampaignSummary {
        domains: seen.len(),
        records: records.len(),
        resumed: previous.len(),
        failures,
        outputs,
    })
}

/// Drops a torn trailing line so appends start on a fresh line.
fn rewrite_checkpoint(path: &Path, records: &[ScanRecord]) -> Result<(), CampaignError> {
    if !path.exists() {
        return Ok(());
    }
    write_atomic(path, |w| quicaudit_core::records::write_jsonl(w, records))?;
    Ok(())
}

fn write_chain_exports(records: &[ScanRecord], out_dir: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    let mut refs: Vec<(&str, &str)> = records
        .iter()
        .filter_map(|r| r.chain_ref.as_deref().map(|c| (r.domain.as_str(), c)))
        .collect();
    refs.sort();
    refs.dedup();
    let mut chains = Vec::new();
    for (domain, name) in refs {
        let path = out_dir.join(name);
        let blob = std::fs::read(&path).map_err(|source| CampaignError::Io { path: path.clone(), source })?;
        if let Ok(chain) = parse_chain(&blob, domain, ChainSource::Https) {
            chains.push(chain);
        }
    }
    let certs = out_dir.join("certs.csv");
    let chain_csv = out_dir.join("chains.csv");
    write_atomic(&certs, |w| write_cert_csv(w, &chains, None).map_err(std::io::Error::other))?;
    write_atomic(&chain_csv, |w| write_chain_csv(w, &chains, None).map_err(std::io::Error::other))?;
    Ok(vec![certs, chain_csv])
}

async fn resolve(domain: &str, shared: &Shared) -> DnsOutcome {
    if shared.cfg.stages.dns {
        return resolve_with(domain, &shared.cfg.dns).await;
    }
    match tokio::net::lookup_host((domain, shared.cfg.quic_port)).await {
        Ok(addrs) => {
            let v4: Vec<Ipv4Addr> = addrs
                .filter_map(|a| match a.ip() {
                    IpAddr::V4(v) => Some(v),
                    IpAddr::V6(_) => None,
                })
                .collect();
            if v4.is_empty() {
                DnsOutcome::failed(DnsStatus::Nxdomain)
            } else {
                DnsOutcome::resolved(v4)
            }
        }
        Err(_) => DnsOutcome::failed(DnsStatus::Nxdomain),
    }
}

fn store_chain(shared: &Shared, domain: &str, mut chain: ChainRecord) -> Option<(String, u32)> {
    chain.domain = domain.to_string();
    let names = write_pem_bundles(&shared.chains_dir, [&chain]).ok()?;
    let name = names.into_iter().next()?;
    Some((format!("{CHAINS_DIR}/{name}"), chain.total_len))
}

/// Runs all stages for one domain; returns the number of local failures.
async fn run_domain(entry: &DomainEntry, shared: &Shared) -> usize {
    let cfg = &shared.cfg;
    let sizes: Vec<InitialSize> =
        cfg.sizes.iter().copied().filter(|s| !shared.done.contains(&(entry.domain.clone(), s.get()))).collect();
    if sizes.is_empty() {
        return 0;
    }
    let mut failures = 0;
    let stage_start = unix_ms();
    let dns = resolve(&entry.domain, shared).await;
    let target = dns.addresses.first().copied();

    let mut https_reachable = false;
    let mut chain = None;
    let mut https_error = None;
    if let (true, Some(ip)) = (cfg.stages.https, target) {
        let hcfg = cfg.https.clone().with_host(&entry.domain, IpAddr::V4(ip));
        let domain = entry.domain.clone();
        match tokio::task::spawn_blocking(move || collect_https_chain(&domain, &hcfg)).await {
            Ok(res) => {
                https_reachable = res.reachable();
                if let Some(c) = res.chain {
                    chain = store_chain(shared, &entry.domain, c);
                } else if let Some(e) = res.error {
                    https_error = Some(format!("https: {e}"));
                }
            }
            Err(e) => {
                failures += 1;
                https_error = Some(format!("https task: {e}"));
            }
        }
    }
    let quic_eligible = cfg.stages.quic && target.is_some() && (!cfg.stages.https || https_reachable);

    for size in sizes {
        let mut r = ScanRecord::new(&entry.domain, entry.rank, size.get(), dns.clone());
        r.https_reachable = https_reachable;
        if let Some((name, len)) = &chain {
            r.chain_ref = Some(name.clone());
            r.chain_total_len = Some(*len);
        }
        r.started_unix_ms = stage_start;
        if quic_eligible {
            let ip = target.expect("eligible implies address");
            r.started_unix_ms = wait_spacing(shared, &entry.domain).await;
            let pcfg = ProbeConfig::new(&entry.domain, SocketAddr::new(IpAddr::V4(ip), cfg.quic_port), size)
                .mode(cfg.mode)
                .transport(cfg.transport)
                .timeout(cfg.timeout)
                .window(cfg.window);
            let out = probe_once(&pcfg).await;
            if out.is_err() {
                failures += 1;
            }
            if let (Ok(o), None) = (&out, &chain) {
                let parsed = o.server_chain.as_ref().and_then(|ders| {
                    let blob: Vec<u8> = ders.concat();
                    parse_chain(&blob, &entry.domain, ChainSource::Quic).ok()
                });
                if let Some(c) = parsed {
                    chain = store_chain(shared, &entry.domain, c);
                    if let Some((name, len)) = &chain {
                        r.chain_ref = Some(name.clone());
                        r.chain_total_len = Some(*len);
                    }
                }
            }
            apply_probe(&mut r, &out, cfg.policy);
        } else if cfg.stages.quic && dns.status == DnsStatus::ARecord && cfg.stages.https {
            r.error = https_error.clone();
        }
        r.finished_unix_ms = unix_ms();
        if shared.tx.send(r).await.is_err() {
            failures += 1;
        }
    }
    failures
}

/// Sleeps until the domain's spacing has elapsed; returns the probe start.
async fn wait_spacing(shared: &Shared, domain: &str) -> u64 {
    let spacing = shared.cfg.spacing.as_millis() as u64;
    let last = shared.last_probe_ms.lock().await.get(domain).copied();
    if let Some(last) = last {
        let due = last + spacing;
        let now = unix_ms();
        if due > now {
            tokio::time::sleep(Duration::from_millis(due - now)).await;
        }
    }
    let start = unix_ms();
    shared.last_probe_ms.lock().await.insert(domain.to_string(), start);
    start
}
