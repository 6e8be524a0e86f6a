use std::net::Ipv4Addr;
use std::path::PathBuf;

use quicaudit_core::cert::{parse_chain, ChainSource};
use quicaudit_core::records::*;
use quicaudit_core::{ClassificationResult, HandshakeClass, TraceOutcome};
use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn sample() -> ScanRecord {
    let mut r = ScanRecord::new("example.test", 42, 1362, DnsOutcome::resolved(vec![Ipv4Addr::new(192, 0, 2, 10), Ipv4Addr::new(192, 0, 2, 11)]));
    r.https_reachable = true;
    r.quic_reachable = true;
    r.quic_outcome = Some(TraceOutcome::Completed);
    r.quic_class = Some(ClassificationResult {
        klass: HandshakeClass::Amplification,
        amplification_factor: 8340.0 / 1362.0,
        pre_validation_server_bytes: 8340,
        pre_validation_client_bytes: 1362,
        client_flights: 1,
        limit_exceeded: true,
        multi_rtt_flag: false,
    });
    r.chain_ref = Some("chains/example.test.pem".into());
    r.chain_total_len = Some(4022);
    r.started_unix_ms = 1_700_000_000_000;
    r.finished_unix_ms = 1_700_000_000_250;
    r
}

fn varied(i: u64) -> ScanRecord {
    let status = DnsStatus::ALL[(i % 5) as usize];
    let dns = if status == DnsStatus::ARecord { DnsOutcome::resolved(vec![Ipv4Addr::from(0x0a00_0000 + i as u32)]) } else { DnsOutcome::failed(status) };
    let mut r = ScanRecord::new(format!("d{i}.example"), i + 1, 1200 + (i % 28) as u32 * 10, dns);
    r.started_unix_ms = 1_000 * i;
    r.finished_unix_ms = 1_000 * i + 17;
    if status == DnsStatus::ARecord {
        r.https_reachable = !i.is_multiple_of(3);
        r.quic_outcome = Some(if i.is_multiple_of(7) { TraceOutcome::Unreachable } else { TraceOutcome::Completed });
        if i.is_multiple_of(7) {
            r.error = Some(format!("no answer, \"quoted\" #{i}"));
        } else {
            r.quic_reachable = true;
            let server = 1000 + 37 * i;
            r.quic_class = Some(ClassificationResult {
                klass: HandshakeClass::ALL[(i % 4) as usize],
                amplification_factor: server as f64 / 1252.0,
                pre_validation_server_bytes: server,
                pre_validation_client_bytes: 1252,
                client_flights: 1 + (i % 2) as u32,
                limit_exceeded: server > 3 * 1252,
                multi_rtt_flag: i % 2 == 1,
            });
        }
    }
    r
}

#[test]
fn single_record_matches_golden_csv() {
    let mut buf = Vec::new();
    write_csv(&mut buf, &[sample()]).unwrap();
    let golden = std::fs::read_to_string(fixtures().join("golden/scan_record.csv")).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), golden);
}

#[test]
fn csv_and_jsonl_round_trip() {
    let records: Vec<_> = std::iter::once(sample()).chain((0..200).map(varied)).collect();
    records.iter().for_each(|r| r.validate().unwrap());
    let mut csv = Vec::new();
    write_csv(&mut csv, &records).unwrap();
    for (a, b) in read_csv(&csv[..]).unwrap().iter().zip(&records) {
        assert_eq!(a, b);
    }
    assert_eq!(read_csv(&csv[..]).unwrap().len(), records.len());
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &records).unwrap();
    for (a, b) in read_jsonl(&jsonl[..]).unwrap().iter().zip(&records) {
        assert_eq!(a, b);
    }
}

#[test]
fn thousand_records_checksum_is_stable() {
    let records: Vec<_> = (0..1000).map(varied).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let paths = export(&records, &out, &[ExportFormat::Csv, ExportFormat::Jsonl]).unwrap();
        let csv = std::fs::read(&paths[0]).unwrap();
        assert_eq!(csv.iter().filter(|b| **b == b'\n').count(), 1001);
        digests.push(hex::encode(Sha256::digest(&csv)));
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0], include_str!("fixtures/golden/records1000.csv.sha256").trim());
}

#[test]
fn failed_write_keeps_previous_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    std::fs::write(&path, "previous").unwrap();
    let err = write_atomic(&path, |w| {
        w.write_all(b"partial")?;
        Err(std::io::Error::other("disk full"))
    });
    assert!(err.is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "previous");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn schema_version_is_checked() {
    let mut r = sample();
    r.schema_version = 2;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &[r]).unwrap();
    assert!(matches!(read_jsonl(&buf[..]), Err(RecordError::Schema { found: 2 })));
}

#[test]
fn pem_bundles_per_domain() {
    let dir = tempfile::tempdir().unwrap();
    let blob = std::fs::read(fixtures().join("certs/chain3-ecdsa.pem")).unwrap();
    let chain = parse_chain(&blob, "ecdsa.example.test", ChainSource::Https).unwrap();
    let names = write_pem_bundles(dir.path(), [&chain]).unwrap();
    assert_eq!(names, ["ecdsa.example.test.pem"]);
    let back = parse_chain(&std::fs::read(dir.path().join(&names[0])).unwrap(), "", ChainSource::File).unwrap();
    assert_eq!(back.to_der(), chain.to_der());
}

#[test]
fn rank_groups_single_cell() {
    let mut records = Vec::new();
    for rank in 1..=50 {
        let mut r = varied(5);
        r.rank = rank;
        r.quic_class.as_mut().unwrap().klass = HandshakeClass::OneRtt;
        records.push(r);
    }
    let s = rank_group_summary(&records, DEFAULT_RANK_GROUP);
    assert_eq!(s.groups.len(), 1);
    assert_eq!(s.groups[0].class_shares["ONE_RTT"], 1.0);
    assert_eq!(s.groups[0].quic_share, 1.0);
}

#[test]
fn rank_groups_recover_mean_share() {
    // Ten groups of 100 whose QUIC shares alternate 18 % and 24 %.
    let mut records = Vec::new();
    for g in 0..10u64 {
        let quic = if g % 2 == 0 { 18 } else { 24 };
        for i in 0..100u64 {
            let mut r = ScanRecord::new(format!("g{g}-{i}"), g * 100 + i + 1, 1362, DnsOutcome::resolved(vec![]));
            r.https_reachable = true;
            r.quic_reachable = i < quic;
            records.push(r);
        }
    }
    let s = rank_group_summary(&records, 100);
    assert_eq!(s.groups.len(), 10);
    assert!((s.mean_quic_share - 0.21).abs() < 1e-12);
    assert!((s.std_quic_share - 0.03).abs() < 1e-12);
    assert_eq!(s.groups[1].rank_from, 101);
}
