use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;
use std::time::Duration;

use quicaudit::campaign::{run_campaign, CampaignConfig, DomainEntry, Stages, CHECKPOINT_FILE};
use quicaudit_core::records::{DnsStatus, ScanRecord};
use quicaudit_core::{InitialSize, TraceOutcome};
use quicaudit_mock::{behavior_grid, serve, BehaviorSpec, Expectation, ServerHandle};
use quicaudit_probe::dns::{DnsConfig, StubAnswer, StubResolver};
use quicaudit_probe::fixture::{HttpFixture, Reply, Routes, Scheme};
use quicaudit_probe::TransportKind;

const SIZES: [u32; 2] = [1300, 1400];

struct Lab {
    dns: StubResolver,
    servers: Vec<ServerHandle>,
    port: u16,
    specs: Vec<(String, BehaviorSpec)>,
}

fn ip(n: u8) -> Ipv4Addr {
    Ipv4Addr::new(127, 0, 0, n)
}

/// One mock server per spec on 127.0.0.(10+i), all on the same UDP port.
async fn lab(specs: Vec<BehaviorSpec>, extra: Vec<(&str, StubAnswer)>) -> Lab {
    'retry: for _ in 0..20 {
        let port = std::net::UdpSocket::bind((ip(10), 0)).unwrap().local_addr().unwrap().port();
        let mut servers = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            match serve(spec.clone(), SocketAddr::new(IpAddr::V4(ip(10 + i as u8)), port)).await {
                Ok(h) => servers.push(h),
                Err(_) => continue 'retry,
            }
        }
        let mut zone: HashMap<String, StubAnswer> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (domain(&s.name), StubAnswer::A(vec![ip(10 + i as u8)])))
            .collect();
        zone.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
        let dns = StubResolver::start("127.0.0.1:0".parse().unwrap(), zone, StubAnswer::NxDomain).await.unwrap();
        let specs = specs.into_iter().map(|s| (domain(&s.name), s)).collect();
        return Lab { dns, servers, port, specs };
    }
    panic!("no shared port available");
}

fn domain(name: &str) -> String {
    let clean: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
    format!("{}.test", clean.trim_matches('-'))
}

fn entries(names: &[String]) -> Vec<DomainEntry> {
    names.iter().enumerate().map(|(i, d)| DomainEntry { rank: i as u64 + 1, domain: d.clone() }).collect()
}

fn config(out: &Path, lab: &Lab) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(out, DnsConfig { timeout: Duration::from_secs(2), ..DnsConfig::new(lab.dns.local_addr()) });
    cfg.stages = "dns,quic".parse::<Stages>().unwrap();
    cfg.sizes = SIZES.iter().map(|&n| InitialSize::new(n).unwrap()).collect();
    cfg.spacing = Duration::from_millis(200);
    cfg.transport = TransportKind::Mock;
    cfg.quic_port = lab.port;
    cfg.timeout = Duration::from_secs(2);
    cfg
}

fn grid_specs() -> Vec<BehaviorSpec> {
    let mut specs: Vec<BehaviorSpec> = behavior_grid().into_iter().map(|r| r.spec).collect();
    specs.push(BehaviorSpec { chain_len: 1500, ..specs[0].clone() }.named("compliant-tiny"));
    specs
}

fn read_records(out: &Path) -> Vec<ScanRecord> {
    quicaudit_core::records::read_csv(std::fs::File::open(out.join("records.csv")).unwrap()).unwrap()
}

/// Records without wall-clock fields, for run-to-run comparison.
fn stable(records: &[ScanRecord]) -> Vec<ScanRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.started_unix_ms = 0;
            r.finished_unix_ms = 0;
            r
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn ten_domains_match_behavior_expectations() {
    let lab = lab(grid_specs(), vec![]).await;
    assert_eq!(lab.specs.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = lab.specs.iter().map(|(d, _)| d.clone()).collect();
    let summary = run_campaign(&entries(&names), &config(dir.path(), &lab)).await.unwrap();
    assert_eq!(summary.domains, 10);
    assert_eq!(summary.records, 20);
    assert_eq!(summary.failures, 0);

    let records = read_records(dir.path());
    assert_eq!(records.len(), 20);
    for r in &records {
        let (_, spec) = lab.specs.iter().find(|(d, _)| *d == r.domain).unwrap();
        let expected = spec.expected(InitialSize::new(r.initial_size).unwrap());
        let observed = match (&r.quic_class, r.quic_outcome) {
            (Some(c), _) => Expectation::Class(c.klass),
            (None, Some(_)) => Expectation::Unreachable,
            (None, None) => panic!("{} was not probed", r.domain),
        };
        assert_eq!(observed, expected, "{} @{}: {:?}", r.domain, r.initial_size, r.error);
        assert_eq!(r.dns.status, DnsStatus::ARecord);
    }
    for name in ["records.csv", "records.jsonl", "certs.csv", "chains.csv", "rank_groups.json", CHECKPOINT_FILE] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let total: usize = lab.servers.iter().map(|s| s.stats().len()).sum();
    let reachable = records.iter().filter(|r| r.quic_reachable).count();
    assert!(total >= reachable, "{total} connections for {reachable} reachable probes");
}

#[tokio::test]
async fn empty_domain_list_succeeds() {
    let lab = lab(vec![], vec![]).await;
    let dir = tempfile::tempdir().unwrap();
    let summary = run_campaign(&[], &config(dir.path(), &lab)).await.unwrap();
    assert_eq!(summary.records, 0);
    assert!(read_records(dir.path()).is_empty());
    assert_eq!(lab.dns.queries(), 0);
}

#[tokio::test]
async fn failed_resolution_skips_probing() {
    let specs = vec![grid_specs().remove(0)];
    let lab = lab(specs, vec![("gone.test", StubAnswer::NxDomain), ("broken.test", StubAnswer::ServFail)]).await;
    let dir = tempfile::tempdir().unwrap();
    let names = vec!["gone.test".to_string(), "broken.test".to_string()];
    run_campaign(&entries(&names), &config(dir.path(), &lab)).await.unwrap();
    let records = read_records(dir.path());
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.quic_outcome.is_none());
        assert!(!r.quic_reachable);
    }
    assert_eq!(records.iter().filter(|r| r.dns.status == DnsStatus::Nxdomain).count(), 2);
    assert_eq!(records.iter().filter(|r| r.dns.status == DnsStatus::Servfail).count(), 2);
    assert_eq!(lab.servers[0].stats().len(), 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn probes_per_domain_respect_spacing() {
    let lab = lab(grid_specs().into_iter().take(3).collect(), vec![]).await;
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = lab.specs.iter().map(|(d, _)| d.clone()).collect();
    let mut cfg = config(dir.path(), &lab);
    cfg.spacing = Duration::from_millis(400);
    run_campaign(&entries(&names), &cfg).await.unwrap();
    let records = read_records(dir.path());
    for name in &names {
        let mut starts: Vec<u64> = records.iter().filter(|r| &r.domain == name).map(|r| r.started_unix_ms).collect();
        starts.sort();
        assert_eq!(starts.len(), 2);
        assert!(starts[1] - starts[0] >= 400, "{name}: {starts:?}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn resume_from_truncated_checkpoint_matches_full_run() {
    let specs: Vec<BehaviorSpec> = grid_specs().into_iter().take(4).collect();
    let lab = lab(specs, vec![]).await;
    let names: Vec<String> = lab.specs.iter().map(|(d, _)| d.clone()).collect();

    let full = tempfile::tempdir().unwrap();
    run_campaign(&entries(&names), &config(full.path(), &lab)).await.unwrap();
    let expected = stable(&read_records(full.path()));
    assert_eq!(expected.len(), 8);

    let partial = tempfile::tempdir().unwrap();
    let checkpoint = std::fs::read_to_string(full.path().join(CHECKPOINT_FILE)).unwrap();
    let lines: Vec<&str> = checkpoint.lines().collect();
    let mut kept = lines[..3].join("\n");
    kept.push('\n');
    kept.push_str(&lines[3][..lines[3].len() / 2]);
    std::fs::write(partial.path().join(CHECKPOINT_FILE), kept).unwrap();

    let before: usize = lab.servers.iter().map(|s| s.stats().len()).sum();
    let summary = run_campaign(&entries(&names), &config(partial.path(), &lab)).await.unwrap();
    let after: usize = lab.servers.iter().map(|s| s.stats().len()).sum();
    assert_eq!(summary.resumed, 3);
    assert_eq!(summary.records, 8);
    assert!(after - before <= 5 + 2, "reprobed {} connections", after - before);
    assert_eq!(stable(&read_records(partial.path())), expected);

    let again = run_campaign(&entries(&names), &config(partial.path(), &lab)).await.unwrap();
    assert_eq!(again.resumed, 8);
    let settled: usize = lab.servers.iter().map(|s| s.stats().len()).sum();
    assert_eq!(settled, after);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn https_chain_is_stored_and_gates_quic() {
    let site_ip = ip(10);
    let spec = grid_specs().remove(0);
    let lab = lab(vec![spec], vec![("dark.test", StubAnswer::A(vec![ip(11)]))]).await;
    let name = lab.specs[0].0.clone();
    let ck = rcgen::generate_simple_self_signed(vec![name.clone()]).unwrap();
    let leaf = ck.cert.der().to_vec();
    let routes: Routes = HashMap::from([
        ((Scheme::Http, "/".to_string()), Reply::redirect(301, &format!("https://{name}/"))),
        ((Scheme::Https, "/".to_string()), Reply::ok("ok")),
    ]);
    let site = HttpFixture::start(IpAddr::V4(site_ip), routes, vec![leaf.clone()], ck.key_pair.serialize_der()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), &lab);
    cfg.stages = Stages::default();
    cfg.sizes.truncate(1);
    cfg.https.http_port = site.http_addr().port();
    cfg.https.https_port = site.https_addr().port();
    cfg.https.connect_timeout = Duration::from_secs(1);
    let names = vec![name.clone(), "dark.test".to_string()];
    run_campaign(&entries(&names), &cfg).await.unwrap();

    let records = read_records(dir.path());
    let lit = records.iter().find(|r| r.domain == name).unwrap();
    assert!(lit.https_reachable);
    assert_eq!(lit.quic_outcome, Some(TraceOutcome::Completed));
    assert_eq!(lit.chain_total_len, Some(leaf.len() as u32));
    let pem = std::fs::read_to_string(dir.path().join(lit.chain_ref.as_ref().unwrap())).unwrap();
    assert_eq!(pem.matches("BEGIN CERTIFICATE").count(), 1);

    let dark = records.iter().find(|r| r.domain == "dark.test").unwrap();
    assert!(!dark.https_reachable);
    assert!(dark.quic_outcome.is_none());
    assert!(dark.error.is_some());

    let chains = std::fs::read_to_string(dir.path().join("chains.csv")).unwrap();
    assert_eq!(chains.lines().count(), 2, "{chains}");
}
