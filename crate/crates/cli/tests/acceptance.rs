//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use quicaudit_core::backscatter::{
    amplification_distribution, read_jsonl, sessionize, BackscatterRecord, PrefixMap, DEFAULT_ASSUMED_INITIAL,
    DEFAULT_SESSION_GAP_US,
};
use quicaudit_core::cert::{limit_fit, parse_chain, ChainRecord, ChainSource};
use quicaudit_core::compress::{
    certificate_message, compress, compress_chain, compression_report, Algorithm, CompressionConfig, Levels,
    DEFAULT_HANDSHAKE_OVERHEAD,
};
use quicaudit_core::trace::ConnectionId;
use quicaudit_core::{
    classify_handshake, limit_check, payload_decomposition, Datagram, Direction, HandshakeTrace, InitialSize,
    LimitPolicy, PacketKind, PacketRecord, TraceOutcome,
};
use quicaudit_mock::{behavior_grid, Expectation, Preset};
use quicaudit_probe::{probe_loopback, Link, ProbeConfig, ProbeMode, TransportKind};
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type SessionKey = (String, Vec<u8>, u64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn size(n: u32) -> InitialSize {
    InitialSize::new(n).expect("valid size")
}

fn load(rel: &str) -> Result<ChainRecord, String> {
    let blob = std::fs::read(fixtures().join(rel)).map_err(|e| format!("{rel}: {e}"))?;
    parse_chain(&blob, rel, ChainSource::File).map_err(|e| format!("{rel}: {e}"))
}

fn mock_cfg(n: u32) -> ProbeConfig {
    ProbeConfig::new("mock.test", "127.0.0.1:443".parse().expect("literal"), size(n)).transport(TransportKind::Mock)
}

fn behavior_grid_conformance() -> Outcome {
    let start = Instant::now();
    let rows = behavior_grid();
    let mut cells = 0;
    let mut mismatches = Vec::new();
    for row in &rows {
        for (s, expected) in &row.expected {
            let out = probe_loopback(&mock_cfg(s.get()), &row.spec, Link::default()).map_err(|e| e.to_string())?;
            let observed = match (out.trace.outcome(), classify_handshake(&out.trace, LimitPolicy::Data3xRfc9000)) {
                (TraceOutcome::Unreachable, _) | (_, Err(_)) => Expectation::Unreachable,
                (_, Ok(c)) => Expectation::Class(c.klass),
            };
            cells += 1;
            if observed != *expected {
                mismatches.push(format!("{}@{}: {observed} != {expected}", row.spec.name, s.get()));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(rows.len() >= 5, || format!("only {} behaviors", rows.len()))?;
    ensure(mismatches.is_empty(), || format!("{} of {cells} mismatched: {}", mismatches.len(), mismatches.join("; ")))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{cells}/{cells} cells over {} behaviors in {:.2}s", rows.len(), elapsed.as_secs_f64()))
}

fn server_trace(client: u32, server: &[(PacketKind, u32)], separate: bool) -> HandshakeTrace {
    let mut ds = vec![Datagram::from_packets(Direction::ClientToServer, 0, vec![PacketRecord::new(PacketKind::Initial, client)], 0)];
    if separate {
        for (i, (k, len)) in server.iter().enumerate() {
            ds.push(Datagram::from_packets(Direction::ServerToClient, 1 + i as u64, vec![PacketRecord::new(*k, *len)], 0));
        }
    } else {
        let packets = server.iter().map(|(k, len)| PacketRecord::new(*k, *len)).collect();
        ds.push(Datagram::from_packets(Direction::ServerToClient, 1, packets, 0));
    }
    HandshakeTrace::builder(TraceOutcome::TimedOut).datagrams(ds).build().expect("well-formed trace")
}

fn amplification_boundary() -> Outcome {
    for client in [1200u32, 1252, 1357, 1472] {
        let mut got = Vec::new();
        for delta in [-1i64, 0, 1] {
            let total = (3 * i64::from(client) + delta) as u32;
            let parts = [(PacketKind::Initial, 1200), (PacketKind::Handshake, total - 1200)];
            let t = server_trace(client, &parts, true);
            let r = classify_handshake(&t, LimitPolicy::Data3xRfc9000).map_err(|e| e.to_string())?;
            got.push(r.limit_exceeded);
        }
        ensure(got == [false, false, true], || format!("client {client}: {got:?}"))?;
    }
    Ok("3x-1, 3x, 3x+1 -> false, false, true for 4 client sizes".into())
}

fn padding_pathology() -> Outcome {
    let out = probe_loopback(&mock_cfg(1362), &Preset::Cloudflare.spec(), Link::default()).map_err(|e| e.to_string())?;
    let p = payload_decomposition(&out.trace).map_err(|e| e.to_string())?;
    ensure(p.padding_bytes == 2462, || format!("padding {} bytes", p.padding_bytes))?;
    Ok("2462 superfluous padding bytes".into())
}

fn resend_pathology() -> Outcome {
    let cfg = mock_cfg(1252).mode(ProbeMode::NoAck);
    let meta = probe_loopback(&cfg, &Preset::Meta.spec(), Link::default()).map_err(|e| e.to_string())?;
    let m = classify_handshake(&meta.trace, LimitPolicy::Data3xRfc9000).map_err(|e| e.to_string())?;
    ensure((m.amplification_factor - 28.0).abs() <= 0.1, || format!("meta factor {}", m.amplification_factor))?;
    let capped = probe_loopback(&cfg, &Preset::Capped.spec(), Link::default()).map_err(|e| e.to_string())?;
    let c = classify_handshake(&capped.trace, LimitPolicy::Data3xRfc9000).map_err(|e| e.to_string())?;
    ensure(c.amplification_factor <= 3.0, || format!("capped factor {}", c.amplification_factor))?;
    Ok(format!("meta {:.3}x, capped {:.3}x", m.amplification_factor, c.amplification_factor))
}

#[derive(Deserialize)]
struct DerEntry {
    file: String,
    index: usize,
    der_len: u32,
    fields: BTreeMap<String, u32>,
    overhead: u32,
}

fn der_accounting() -> Outcome {
    let mut certs = 0;
    for dir in ["certs", "chains", "realworld", "truststore"] {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures().join(dir))
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        for p in paths {
            let blob = std::fs::read(&p).map_err(|e| e.to_string())?;
            let chain = parse_chain(&blob, "", ChainSource::File).map_err(|e| format!("{}: {e}", p.display()))?;
            for (i, c) in chain.certs.iter().enumerate() {
                let ctx = format!("{}#{i}", p.display());
                ensure(c.field_sizes.total() + c.structural_overhead == c.der_len, || format!("{ctx}: sizes do not sum"))?;
                ensure(c.reserialize().map_err(|e| e.to_string())? == c.der, || format!("{ctx}: round trip differs"))?;
                certs += 1;
            }
        }
    }
    let text = std::fs::read_to_string(fixtures().join("der_oracle.json")).map_err(|e| e.to_string())?;
    let oracle: Vec<DerEntry> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for e in &oracle {
        let chain = load(&e.file)?;
        let c = chain.certs.get(e.index).ok_or_else(|| format!("{}#{} missing", e.file, e.index))?;
        ensure(c.der_len == e.der_len && c.structural_overhead == e.overhead, || format!("{}#{}: lengths", e.file, e.index))?;
        for (name, want) in &e.fields {
            ensure(c.field_sizes.get(name) == Some(*want), || format!("{}#{} {name}", e.file, e.index))?;
        }
    }
    Ok(format!("{certs} certificates exact and round-tripped, {} checked against the ASN.1 oracle", oracle.len()))
}

fn limit_fit_boundary() -> Outcome {
    let mut chain = load("certs/ecdsa256-selfsigned.pem")?;
    let mut fit = |total: u32, initial: u32| {
        chain.total_len = total;
        limit_fit(&chain, size(initial), 0)
    };
    let a = fit(4022, 1357);
    ensure(a.fits && a.budget == 4071, || format!("4022 under 3x1357: {a:?}"))?;
    let b = fit(4022, 1340);
    ensure(!b.fits, || format!("4022 under 3x1340: {b:?}"))?;
    let c = fit(2329, 1200);
    ensure(c.fits && c.budget == 3600, || format!("2329 under 3x1200: {c:?}"))?;
    Ok("4022<=4071, 4022>4020, 2329<=3600".into())
}

#[derive(Deserialize)]
struct CompressionEntry {
    file: String,
    original_len: u32,
    zlib: u32,
    brotli: u32,
    zstd: u32,
}

fn synthetic_chains() -> Result<Vec<ChainRecord>, String> {
    let mut pool = Vec::new();
    for dir in ["chains", "certs", "realworld"] {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures().join(dir))
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        for p in paths {
            let blob = std::fs::read(&p).map_err(|e| e.to_string())?;
            pool.extend(parse_chain(&blob, "", ChainSource::File).map_err(|e| e.to_string())?.certs);
        }
    }
    let mut state = 0x5851_f42d_4c95_7f2du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    Ok((0..200)
        .map(|i| {
            let n = 1 + (next() % 5) as usize;
            let certs = (0..n).map(|_| pool[(next() % pool.len() as u64) as usize].clone()).collect();
            ChainRecord::from_certs(format!("synthetic{i}"), ChainSource::File, certs)
        })
        .collect())
}

fn compression_oracle() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("compression_oracle.json")).map_err(|e| e.to_string())?;
    let oracle: Vec<CompressionEntry> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let fixture_chains = oracle.iter().filter(|e| e.file.starts_with("chains/")).count();
    ensure(fixture_chains == 20, || format!("{fixture_chains} fixture chains in oracle"))?;
    let cfg = CompressionConfig::default();
    for e in &oracle {
        let chain = load(&e.file)?;
        for (alg, want) in [(Algorithm::Zlib, e.zlib), (Algorithm::Brotli, e.brotli), (Algorithm::Zstd, e.zstd)] {
            let o = compress_chain(&chain, alg, &cfg).map_err(|e| e.to_string())?;
            ensure(o.original_len == e.original_len, || format!("{}: original {}", e.file, o.original_len))?;
            ensure(o.compressed_len == want, || format!("{} {alg}: {} != {want}", e.file, o.compressed_len))?;
            let restored = o.restore().map_err(|e| e.to_string())?;
            ensure(restored.concat() == chain.to_der(), || format!("{} {alg}: round trip differs", e.file))?;
        }
    }

    let corpus = synthetic_chains()?;
    let budgets: Vec<InitialSize> = [1200, 1357, 1472].map(size).to_vec();
    for overhead in [0, DEFAULT_HANDSHAKE_OVERHEAD] {
        let cfg = CompressionConfig { budgets: budgets.clone(), overhead, ..Default::default() };
        let report = compression_report(&corpus, &Algorithm::ALL, &cfg).map_err(|e| e.to_string())?;
        for alg in Algorithm::ALL {
            let lens: Vec<usize> = corpus
                .iter()
                .map(|c| compress(alg, &certificate_message(c.ders()), &Levels::default()).map(|v| v.len()))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let summary = report.get(alg).ok_or_else(|| format!("{alg} missing from report"))?;
            for b in &budgets {
                let count = lens.iter().filter(|&&l| l + overhead as usize <= 3 * b.get() as usize).count();
                let frac = summary.fit_fractions.get(&b.get()).copied();
                ensure(frac == Some(count as f64 / corpus.len() as f64), || format!("{alg} {b} overhead {overhead}: {frac:?} vs {count}/200"))?;
            }
        }
    }
    Ok(format!("{} chains x 3 algorithms exact, 200-chain report equals brute force", oracle.len()))
}

fn synthetic_backscatter(n: usize, seed: u64) -> Vec<BackscatterRecord> {
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let srcs = ["157.240.1.1", "157.240.9.9", "31.13.70.1", "104.16.3.3", "104.20.1.1", "198.51.100.7"];
    (0..n)
        .map(|_| BackscatterRecord {
            src_ip: srcs[(next() % srcs.len() as u64) as usize].parse().expect("literal"),
            dst_ip: "192.0.2.9".parse().expect("literal"),
            time_us: next() % 7_200_000_000,
            udp_len: 40 + (next() % 1400) as u32,
            scid: ConnectionId(vec![(next() % 50) as u8, 7]),
            provider_label: None,
        })
        .collect()
}

fn group_by(records: &[BackscatterRecord], prefixes: &PrefixMap, gap: u64) -> BTreeMap<SessionKey, u64> {
    let mut by: BTreeMap<(String, Vec<u8>), Vec<(u64, u32)>> = BTreeMap::new();
    for r in records {
        let provider = prefixes.lookup(r.src_ip).unwrap_or("OTHER").to_string();
        by.entry((provider, r.scid.0.clone())).or_default().push((r.time_us, r.udp_len));
    }
    let mut out = BTreeMap::new();
    for ((provider, scid), mut v) in by {
        v.sort();
        let (mut start, mut last, mut sum) = (v[0].0, v[0].0, 0u64);
        for (t, len) in v {
            if t - last > gap {
                out.insert((provider.clone(), scid.clone(), start), sum);
                start = t;
                sum = 0;
            }
            sum += u64::from(len);
            last = t;
        }
        out.insert((provider, scid, start), sum);
    }
    out
}

fn sessionization() -> Outcome {
    let dir = fixtures().join("backscatter");
    let prefixes = PrefixMap::from_csv(std::fs::File::open(dir.join("prefixes.csv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let records = synthetic_backscatter(10_000, 0x0123_4567_89ab_cdef);
    let sessions = sessionize(&records, &prefixes, DEFAULT_SESSION_GAP_US);
    let got: BTreeMap<_, _> = sessions.iter().map(|s| ((s.provider.clone(), s.scid.0.clone(), s.first_us), s.total_bytes)).collect();
    ensure(got.len() == sessions.len(), || "duplicate session keys".into())?;
    ensure(got == group_by(&records, &prefixes, DEFAULT_SESSION_GAP_US), || "per-session totals differ from group-by".into())?;

    let file = std::fs::File::open(dir.join("sessions.jsonl")).map_err(|e| e.to_string())?;
    let fixture = read_jsonl(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;
    let dist = amplification_distribution(&sessionize(&fixture, &prefixes, DEFAULT_SESSION_GAP_US), size(DEFAULT_ASSUMED_INITIAL));
    let meta = dist.iter().find(|d| d.provider == "Meta").ok_or("no Meta sessions")?;
    ensure(meta.factor.max == 45.0, || format!("max factor {}", meta.factor.max))?;
    ensure(meta.duration_s.median == 51.0, || format!("median duration {}", meta.duration_s.median))?;
    Ok(format!("{} sessions match group-by; fixture max factor 45, median 51 s", sessions.len()))
}

fn policy_pairs() -> Outcome {
    use PacketKind::{Handshake, Initial};
    let pairs = [
        (LimitPolicy::HandshakePackets3, server_trace(1200, &[(Initial, 300), (Handshake, 300), (Handshake, 300), (Handshake, 300)], true),
            server_trace(1200, &[(Initial, 300), (Handshake, 300), (Handshake, 300), (Handshake, 300), (Handshake, 300)], false)),
        (LimitPolicy::Datagrams3, server_trace(1200, &[(Initial, 400), (Initial, 400), (Initial, 400)], true),
            server_trace(1200, &[(Initial, 200), (Initial, 200), (Initial, 200), (Initial, 200)], true)),
        (LimitPolicy::Bytes3x, server_trace(1200, &[(Initial, 1200), (Handshake, 2400)], false),
            server_trace(1200, &[(Initial, 1200), (Handshake, 2401)], false)),
        (LimitPolicy::Data3xRfc9000, server_trace(1300, &[(Initial, 1300), (Handshake, 2600)], true),
            server_trace(1300, &[(Initial, 1300), (Handshake, 2601)], true)),
    ];
    for (policy, ok, bad) in &pairs {
        let a = limit_check(ok, *policy);
        let b = limit_check(bad, *policy);
        ensure(a.compliant, || format!("{policy} rejected its compliant trace: {}", a.detail))?;
        ensure(!b.compliant, || format!("{policy} accepted its violating trace: {}", b.detail))?;
    }
    Ok("4 policies accept/reject their pairs".into())
}

const DATASET_ENV: &str = "QUICAUDIT_DATASET";

/// Replays a records export (records.csv) of the published scan.
fn dataset_replay() -> Option<Outcome> {
    let path = std::env::var_os(DATASET_ENV).map(PathBuf::from)?;
    Some(replay(&path))
}

fn replay(path: &Path) -> Outcome {
    let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let records = quicaudit_core::records::read_csv(file).map_err(|e| e.to_string())?;
    let median = |quic: bool| {
        let v: Vec<f64> =
            records.iter().filter(|r| r.quic_reachable == quic).filter_map(|r| r.chain_total_len.map(f64::from)).collect();
        quicaudit_core::stats::median(&v)
    };
    let (q, other) = (median(true), median(false));
    let lens: Vec<u32> = records.iter().filter_map(|r| r.chain_total_len).collect();
    let exceed = lens.iter().filter(|&&l| u64::from(l) > size(1357).budget()).count();
    let share = (100.0 * exceed as f64 / lens.len().max(1) as f64).round();
    ensure(q == Some(2329.0) && other == Some(4022.0) && share == 35.0, || {
        format!("medians {q:?} / {other:?}, {share}% exceed 3x1357")
    })?;
    Ok("medians 2329 / 4022, 35% exceed 3x1357".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("behavior grid conformance", behavior_grid_conformance),
        ("amplification boundary", amplification_boundary),
        ("padding pathology", padding_pathology),
        ("resend pathology", resend_pathology),
        ("DER byte accounting", der_accounting),
        ("limit_fit boundary", limit_fit_boundary),
        ("compression oracle", compression_oracle),
        ("sessionization conservation", sessionization),
        ("limit policies", policy_pairs),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    match dataset_replay() {
        None => println!("SKIP dataset replay: set {DATASET_ENV} to a records.csv of the published scan"),
        Some(Ok(detail)) => println!("PASS dataset replay: {detail}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL dataset replay: {why}");
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
