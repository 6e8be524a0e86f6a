use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use quicaudit::campaign::{read_domains_file, run_campaign, CampaignConfig, CampaignError, Stages};
use quicaudit::exit;
use quicaudit::grid::{class_shares, run_grid, write_cells_csv, write_class_shares_csv};
use quicaudit_core::backscatter::{self, amplification_distribution, sessionize, PrefixMap};
use quicaudit_core::cert::export::{write_cert_csv, write_chain_csv};
use quicaudit_core::cert::{parse_chain, ChainRecord, ChainSource, TrustStore};
use quicaudit_core::compress::{compress_chain, Algorithm, CompressionConfig};
use quicaudit_core::records::{rank_group_summary, write_atomic, DnsOutcome, ExportFormat, DEFAULT_RANK_GROUP};
use quicaudit_core::trace::jsonl;
use quicaudit_core::{classify_handshake, HandshakeTrace, InitialSize, LimitPolicy};
use quicaudit_mock::{serve, BehaviorSpec, Preset};
use quicaudit_probe::dns::{parse_resolver, DnsConfig, RESOLVER_ENV};
use quicaudit_probe::https::HttpsConfig;
use quicaudit_probe::{probe_once, sweep, sweep_records, ProbeConfig, ProbeMode, TransportKind};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "quicaudit", version, about = "QUIC handshake amplification and certificate audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One handshake probe with a fixed Initial size.
    Probe(ProbeArgs),
    /// Probes across a range of Initial sizes.
    Sweep(SweepArgs),
    /// Runs a scripted mock QUIC server.
    MockServe(MockArgs),
    /// Multi-domain campaign with checkpointing.
    Campaign(CampaignArgs),
    /// Sessionizes backscatter records and summarizes amplification.
    Backscatter(BackscatterArgs),
    /// Per-certificate and per-chain CSV exports.
    Certs(CertsArgs),
    /// Certificate compression results per chain.
    Compress(CompressArgs),
    /// Classifies recorded handshake traces.
    Classify(ClassifyArgs),
    /// Probes every mock profile at every Initial size in simulated time.
    Grid(GridArgs),
    /// Per rank group reachability and class shares from exported records.
    RankGroups(RankArgs),
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// host or host:port (default port 443).
    #[arg(long)]
    target: String,
    /// Connect to this address instead of resolving the host.
    #[arg(long)]
    resolve: Option<IpAddr>,
    #[arg(long, default_value = "complete")]
    mode: ProbeMode,
    #[arg(long, default_value = "10", value_parser = seconds)]
    timeout: Duration,
    /// Observation window in no-ack mode.
    #[arg(long, default_value = "60", value_parser = seconds)]
    window: Duration,
    #[arg(long, default_value = "quic", value_parser = transport)]
    transport: TransportKind,
    /// Abandon the handshake on Retry instead of following it.
    #[arg(long)]
    no_retry: bool,
    #[arg(long, default_value = "h3")]
    alpn: String,
    #[arg(long, default_value = "RFC9000", value_parser = policy)]
    policy: LimitPolicy,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 1200)]
    initial_size: u32,
    /// Trace JSONL output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 1200)]
    from: u32,
    #[arg(long, default_value_t = 1472)]
    to: u32,
    #[arg(long, default_value_t = 10)]
    step: u32,
    #[arg(long, default_value = "30m", value_parser = humantime::parse_duration)]
    spacing: Duration,
    /// Directory for traces.jsonl and records.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value = "compliant")]
    preset: Preset,
    /// Overrides the preset's certificate chain size.
    #[arg(long)]
    chain_bytes: Option<u32>,
    /// JSON behavior file; replaces the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = 4433)]
    port: u16,
    /// Stop after this long; runs until interrupted otherwise.
    #[arg(long, value_parser = humantime::parse_duration)]
    duration: Option<Duration>,
}

#[derive(Args)]
struct CampaignArgs {
    /// Ranked domain list (rank,domain).
    #[arg(long)]
    domains: PathBuf,
    #[arg(long, default_value = "dns,https,quic")]
    stages: String,
    /// Repeatable; each size is probed once per domain.
    #[arg(long = "initial-size", default_values_t = [1362])]
    initial_sizes: Vec<u32>,
    #[arg(long, default_value = "30m", value_parser = humantime::parse_duration)]
    spacing: Duration,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = quicaudit::campaign::DEFAULT_CONCURRENCY)]
    concurrency: usize,
    /// DNS resolver, ip or ip:port.
    #[arg(long, env = RESOLVER_ENV)]
    resolver: Option<String>,
    #[arg(long, default_value = "10", value_parser = seconds)]
    dns_timeout: Duration,
    #[arg(long, default_value = "complete")]
    mode: ProbeMode,
    #[arg(long, default_value = "10", value_parser = seconds)]
    timeout: Duration,
    #[arg(long, default_value = "60", value_parser = seconds)]
    window: Duration,
    #[arg(long, default_value = "quic", value_parser = transport)]
    transport: TransportKind,
    #[arg(long, default_value_t = 443)]
    quic_port: u16,
    #[arg(long, default_value_t = 80)]
    http_port: u16,
    #[arg(long, default_value_t = 443)]
    https_port: u16,
    #[arg(long, default_value = "RFC9000", value_parser = policy)]
    policy: LimitPolicy,
}

#[derive(Args)]
struct BackscatterArgs {
    /// Records as JSONL, or CSV when the extension is .csv.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    prefixes: Option<PathBuf>,
    #[arg(long, default_value_t = backscatter::DEFAULT_ASSUMED_INITIAL)]
    assumed_initial: u32,
    #[arg(long, default_value = "300s", value_parser = humantime::parse_duration)]
    gap: Duration,
    #[arg(long)]
    out: PathBuf,
    /// Also write one row per session.
    #[arg(long)]
    sessions: Option<PathBuf>,
}

#[derive(Args)]
struct CertsArgs {
    /// PEM/DER files or directories; the file stem names the domain.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Directory of trusted root PEMs for cross-sign detection.
    #[arg(long)]
    truststore: Option<PathBuf>,
    #[arg(long, default_value = "certs.csv")]
    certs_out: PathBuf,
    #[arg(long, default_value = "chains.csv")]
    chains_out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "zlib,brotli,zstd", value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = quicaudit_core::compress::DEFAULT_HANDSHAKE_OVERHEAD)]
    overhead: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "RFC9000", value_parser = policy)]
    policy: LimitPolicy,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Directory for grid.csv, records.csv and class_shares.csv.
    #[arg(long)]
    out: PathBuf,
    /// One-way delay of the simulated path in milliseconds.
    #[arg(long, default_value_t = 10)]
    delay_ms: u64,
}

#[derive(Args)]
struct RankArgs {
    /// records.csv or records.jsonl from a campaign.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RANK_GROUP)]
    group_size: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn seconds(s: &str) -> Result<Duration, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Duration::from_secs_f64(v)),
        Ok(_) => Err("must be positive".into()),
        Err(_) => humantime::parse_duration(s).map_err(|e| e.to_string()),
    }
}

fn transport(s: &str) -> Result<TransportKind, String> {
    s.parse().map_err(|e: quicaudit_probe::ProbeError| e.to_string())
}

fn policy(s: &str) -> Result<LimitPolicy, String> {
    s.parse()
}

/// Marks an error as a configuration problem (exit code 3).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn size(n: u32) -> Result<InitialSize> {
    InitialSize::new(n).map_err(|e| config_err(e.to_string()))
}

async fn target_addr(t: &TargetArgs) -> Result<(String, SocketAddr)> {
    let (host, port) = match t.target.rsplit_once(':') {
        Some((h, p)) if !h.contains(':') => (h.to_string(), p.parse::<u16>().map_err(|_| config_err(format!("bad port in {}", t.target)))?),
        _ => (t.target.clone(), 443),
    };
    if let Some(ip) = t.resolve {
        return Ok((host, SocketAddr::new(ip, port)));
    }
    if let Ok(ip) = host.parse::<IpAddr>() {
        return Ok((host, SocketAddr::new(ip, port)));
    }
    let addr = tokio::net::lookup_host((host.as_str(), port))
        .await
        .with_context(|| format!("resolving {host}"))?
        .find(SocketAddr::is_ipv4)
        .with_context(|| format!("{host} has no IPv4 address"))?;
    Ok((host, addr))
}

async fn base_config(t: &TargetArgs, initial: InitialSize) -> Result<ProbeConfig> {
    let (host, addr) = target_addr(t).await?;
    let mut cfg = ProbeConfig::new(host, addr, initial).mode(t.mode).transport(t.transport).timeout(t.timeout).window(t.window);
    cfg.retry_enabled = !t.no_retry;
    cfg.alpn = t.alpn.clone();
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Serialize)]
struct ClassRow<'a> {
    target: &'a str,
    initial_size: u32,
    outcome: &'static str,
    class: Option<&'static str>,
    amplification_factor: Option<f64>,
    server_bytes: Option<u64>,
    client_bytes: Option<u64>,
    client_flights: Option<u32>,
    limit_exceeded: Option<bool>,
    error: Option<String>,
}

fn class_row(trace: &HandshakeTrace, policy: LimitPolicy) -> ClassRow<'_> {
    let c = classify_handshake(trace, policy);
    let ok = c.as_ref().ok();
    ClassRow {
        target: trace.target().unwrap_or(""),
        initial_size: trace.client_initial_size(),
        outcome: trace.outcome().as_str(),
        class: ok.map(|c| c.klass.as_str()),
        amplification_factor: ok.map(|c| c.amplification_factor),
        server_bytes: ok.map(|c| c.pre_validation_server_bytes),
        client_bytes: ok.map(|c| c.pre_validation_client_bytes),
        client_flights: ok.map(|c| c.client_flights),
        limit_exceeded: ok.map(|c| c.limit_exceeded),
        error: c.err().map(|e| e.to_string()),
    }
}

fn print_summary(trace: &HandshakeTrace, policy: LimitPolicy) {
    let r = class_row(trace, policy);
    match (r.class, r.amplification_factor) {
        (Some(c), Some(f)) => eprintln!(
            "{} @{}: {} {} factor {:.2} ({} / {} bytes)",
            r.target,
            r.initial_size,
            r.outcome,
            c,
            f,
            r.server_bytes.unwrap_or(0),
            r.client_bytes.unwrap_or(0)
        ),
        _ => eprintln!("{} @{}: {} ({})", r.target, r.initial_size, r.outcome, r.error.unwrap_or_default()),
    }
}

async fn cmd_probe(a: ProbeArgs) -> Result<i32> {
    let cfg = base_config(&a.target, size(a.initial_size)?).await?;
    let out = probe_once(&cfg).await?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            jsonl::write_trace(&mut w, &out.trace)?;
            w.flush()?;
        }
        None => print!("{}", jsonl::to_string(&out.trace)),
    }
    print_summary(&out.trace, a.target.policy);
    if let Some(note) = out.note {
        eprintln!("note: {note}");
    }
    Ok(exit::OK)
}

async fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let sizes = InitialSize::grid(a.from, a.to, a.step).map_err(|e| config_err(e.to_string()))?;
    let base = base_config(&a.target, sizes[0]).await?;
    let items = sweep(&base, &sizes, a.spacing).await;
    std::fs::create_dir_all(&a.out)?;
    let mut w = create(&a.out.join("traces.jsonl"))?;
    let mut failures = 0;
    for item in &items {
        match &item.output {
            Ok(o) => {
                jsonl::write_trace(&mut w, &o.trace)?;
                print_summary(&o.trace, a.target.policy);
            }
            Err(e) => {
                failures += 1;
                eprintln!("{} @{}: error {e}", base.host, item.size.get());
            }
        }
    }
    w.flush()?;
    let dns = DnsOutcome::resolved(match base.addr.ip() {
        IpAddr::V4(v) => vec![v],
        IpAddr::V6(_) => vec![],
    });
    let records = sweep_records(&base.host, 1, &dns, &items, a.target.policy);
    quicaudit_core::records::export(&records, &a.out, &[ExportFormat::Csv])?;
    Ok(if failures > 0 { exit::PARTIAL } else { exit::OK })
}

async fn cmd_mock(a: MockArgs) -> Result<i32> {
    let mut spec = match &a.spec {
        Some(p) => BehaviorSpec::from_json_file(p).map_err(|e| config_err(e.to_string()))?,
        None => a.preset.spec(),
    };
    if let Some(n) = a.chain_bytes {
        spec.chain_len = n;
    }
    spec.validate().map_err(|e| config_err(e.to_string()))?;
    let handle = serve(spec.clone(), SocketAddr::new(a.bind, a.port)).await?;
    eprintln!("mock {} listening on {}", spec.name, handle.local_addr());
    match a.duration {
        Some(d) => tokio::time::sleep(d).await,
        None => tokio::signal::ctrl_c().await?,
    }
    let stats = handle.stats();
    eprintln!("{} connections, {} dropped datagrams", stats.len(), handle.dropped());
    handle.shutdown().await?;
    Ok(exit::OK)
}

async fn cmd_campaign(a: CampaignArgs) -> Result<i32> {
    let stages: Stages = a.stages.parse().map_err(|e: CampaignError| config_err(e.to_string()))?;
    let resolver = match &a.resolver {
        Some(r) => parse_resolver(r).map_err(config_err)?,
        None => quicaudit_probe::dns::DEFAULT_RESOLVER,
    };
    let domains = read_domains_file(&a.domains).map_err(|e| config_err(e.to_string()))?;
    let mut cfg = CampaignConfig::new(&a.out, DnsConfig { timeout: a.dns_timeout, ..DnsConfig::new(resolver) });
    cfg.stages = stages;
    cfg.sizes = a.initial_sizes.iter().map(|&n| size(n)).collect::<Result<_>>()?;
    cfg.spacing = a.spacing;
    cfg.concurrency = a.concurrency;
    cfg.mode = a.mode;
    cfg.timeout = a.timeout;
    cfg.window = a.window;
    cfg.transport = a.transport;
    cfg.quic_port = a.quic_port;
    cfg.policy = a.policy;
    cfg.https = HttpsConfig { http_port: a.http_port, https_port: a.https_port, ..HttpsConfig::default() };
    let summary = match run_campaign(&domains, &cfg).await {
        Ok(s) => s,
        Err(e) if e.is_config() => return Err(config_err(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    eprintln!(
        "{} domains, {} records ({} resumed), {} local failures",
        summary.domains, summary.records, summary.resumed, summary.failures
    );
    for p in &summary.outputs {
        eprintln!("wrote {}", p.display());
    }
    Ok(if summary.failures > 0 { exit::PARTIAL } else { exit::OK })
}

fn cmd_backscatter(a: BackscatterArgs) -> Result<i32> {
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let records = if a.input.extension().is_some_and(|e| e == "csv") {
        backscatter::read_csv(f)?
    } else {
        backscatter::read_jsonl(BufReader::new(f))?
    };
    let prefixes = match &a.prefixes {
        Some(p) => PrefixMap::from_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => PrefixMap::default(),
    };
    let assumed = size(a.assumed_initial)?;
    let sessions = sessionize(&records, &prefixes, a.gap.as_micros() as u64);
    let dist = amplification_distribution(&sessions, assumed);
    write_atomic(&a.out, |w| backscatter::write_summary_csv(w, &dist).map_err(std::io::Error::other))?;
    if let Some(p) = &a.sessions {
        write_atomic(p, |w| backscatter::write_sessions_csv(w, &sessions, assumed).map_err(std::io::Error::other))?;
    }
    eprintln!("{} records, {} sessions, {} providers", records.len(), sessions.len(), dist.len());
    Ok(exit::OK)
}

fn chain_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| matches!(e.to_str(), Some("pem" | "der" | "crt" | "cer"))))
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!(config_err("no certificate files found"));
    }
    Ok(out)
}

fn load_chains(inputs: &[PathBuf]) -> Result<Vec<ChainRecord>> {
    chain_files(inputs)?
        .iter()
        .map(|p| {
            let blob = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let domain = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            parse_chain(&blob, &domain, ChainSource::File).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

fn cmd_certs(a: CertsArgs) -> Result<i32> {
    let chains = load_chains(&a.inputs)?;
    let store = a.truststore.as_ref().map(TrustStore::from_dir).transpose()?;
    write_atomic(&a.certs_out, |w| write_cert_csv(w, &chains, store.as_ref()).map_err(std::io::Error::other))?;
    write_atomic(&a.chains_out, |w| write_chain_csv(w, &chains, store.as_ref()).map_err(std::io::Error::other))?;
    eprintln!("{} chains, {} certificates", chains.len(), chains.iter().map(|c| c.certs.len()).sum::<usize>());
    Ok(exit::OK)
}

fn cmd_compress(a: CompressArgs) -> Result<i32> {
    let chains = load_chains(&a.inputs)?;
    let cfg = CompressionConfig { overhead: a.overhead, ..CompressionConfig::default() };
    let mut rows = Vec::new();
    for c in &chains {
        for &alg in &a.algorithms {
            rows.push((c.domain.as_str(), compress_chain(c, alg, &cfg)?));
        }
    }
    write_atomic(&a.out, |w| {
        quicaudit_core::compress::write_csv(w, rows.iter().map(|(d, o)| (*d, o)), a.overhead).map_err(std::io::Error::other)
    })?;
    Ok(exit::OK)
}

fn cmd_classify(a: ClassifyArgs) -> Result<i32> {
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let traces = jsonl::read_traces(BufReader::new(f))?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &traces {
            out.serialize(class_row(t, a.policy)).map_err(std::io::Error::other)?;
        }
        out.flush()
    };
    match &a.out {
        Some(p) => write_atomic(p, write)?,
        None => write(&mut std::io::stdout().lock())?,
    }
    Ok(exit::OK)
}

fn cmd_grid(a: GridArgs) -> Result<i32> {
    let link = quicaudit_probe::Link { one_way_us: a.delay_ms * 1000 };
    let (cells, records) = run_grid(link);
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("grid.csv"), |w| write_cells_csv(w, &cells).map_err(std::io::Error::other))?;
    quicaudit_core::records::export(&records, &a.out, &[ExportFormat::Csv])?;
    let shares = class_shares(&records);
    write_atomic(&a.out.join("class_shares.csv"), |w| write_class_shares_csv(w, &shares).map_err(std::io::Error::other))?;
    let matched = cells.iter().filter(|c| c.matches).count();
    eprintln!("{matched}/{} cells match their expectation", cells.len());
    Ok(if matched == cells.len() { exit::OK } else { exit::PARTIAL })
}

fn cmd_ranks(a: RankArgs) -> Result<i32> {
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let records = if a.input.extension().is_some_and(|e| e == "csv") {
        quicaudit_core::records::read_csv(f)?
    } else {
        quicaudit_core::records::read_jsonl(BufReader::new(f))?
    };
    let summary = rank_group_summary(&records, a.group_size);
    let json = serde_json::to_string_pretty(&summary)?;
    match &a.out {
        Some(p) => write_atomic(p, |w| w.write_all(json.as_bytes()))?,
        None => println!("{json}"),
    }
    Ok(exit::OK)
}

async fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Probe(a) => cmd_probe(a).await,
        Command::Sweep(a) => cmd_sweep(a).await,
        Command::MockServe(a) => cmd_mock(a).await,
        Command::Campaign(a) => cmd_campaign(a).await,
        Command::Backscatter(a) => cmd_backscatter(a),
        Command::Certs(a) => cmd_certs(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Grid(a) => cmd_grid(a),
        Command::RankGroups(a) => cmd_ranks(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let code = match rt.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                exit::CONFIG
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}
