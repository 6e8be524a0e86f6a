use std::path::PathBuf;

use quicaudit_core::cert::{parse_chain, ChainRecord, ChainSource};
use quicaudit_core::compress::*;
use quicaudit_core::InitialSize;
use serde::Deserialize;

#[derive(Deserialize)]
struct Entry {
    file: String,
    original_len: u32,
    zlib: u32,
    brotli: u32,
    zstd: u32,
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn load(rel: &str) -> ChainRecord {
    parse_chain(&std::fs::read(fixtures().join(rel)).unwrap(), rel, ChainSource::File).unwrap()
}

fn oracle() -> Vec<Entry> {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join("compression_oracle.json")).unwrap()).unwrap()
}

#[test]
fn lengths_match_reference_libraries() {
    let entries = oracle();
    assert_eq!(entries.iter().filter(|e| e.file.starts_with("chains/")).count(), 20);
    let cfg = CompressionConfig::default();
    for e in &entries {
        let chain = load(&e.file);
        for (alg, want) in [(Algorithm::Zlib, e.zlib), (Algorithm::Brotli, e.brotli), (Algorithm::Zstd, e.zstd)] {
            let o = compress_chain(&chain, alg, &cfg).unwrap();
            assert_eq!(o.original_len, e.original_len, "{}", e.file);
            assert_eq!(o.compressed_len, want, "{} {alg}", e.file);
            let restored = o.restore().unwrap();
            assert_eq!(restored.concat(), chain.to_der(), "{} {alg}", e.file);
        }
    }
}

#[test]
fn minimal_chain_gains() {
    let chain = load("certs/ecdsa256-selfsigned.pem");
    for alg in Algorithm::ALL {
        let o = compress_chain(&chain, alg, &CompressionConfig::default()).unwrap();
        assert!(o.compressed_len < o.original_len, "{alg}");
        assert!((o.ratio + o.remaining - 1.0).abs() < 1e-12);
    }
}

#[test]
fn deterministic() {
    let chain = load("chains/chain07.pem");
    for alg in Algorithm::ALL {
        let a = compress_chain(&chain, alg, &CompressionConfig::default()).unwrap();
        let b = compress_chain(&chain, alg, &CompressionConfig::default()).unwrap();
        assert_eq!(a.payload, b.payload);
    }
}

/// 200 chains assembled from the fixture certificates, 1 to 5 certificates each.
fn synthetic_corpus() -> Vec<ChainRecord> {
    let mut pool = Vec::new();
    for dir in ["chains", "certs", "realworld"] {
        let mut paths: Vec<_> = std::fs::read_dir(fixtures().join(dir)).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        for p in paths {
            pool.extend(parse_chain(&std::fs::read(p).unwrap(), "", ChainSource::File).unwrap().certs);
        }
    }
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..200)
        .map(|i| {
            let n = 1 + (next() % 5) as usize;
            let certs = (0..n).map(|_| pool[(next() % pool.len() as u64) as usize].clone()).collect();
            ChainRecord::from_certs(format!("synthetic{i}"), ChainSource::File, certs)
        })
        .collect()
}

#[test]
fn report_fractions_equal_brute_force() {
    let corpus = synthetic_corpus();
    let budgets: Vec<InitialSize> = [1200, 1250, 1357, 1472].map(|s| InitialSize::new(s).unwrap()).to_vec();
    let sizes: Vec<(Algorithm, Vec<usize>)> = Algorithm::ALL
        .into_iter()
        .map(|alg| {
            let v = corpus
                .iter()
                .map(|c| compress(alg, &certificate_message(c.ders()), &Levels::default()).unwrap().len())
                .collect();
            (alg, v)
        })
        .collect();
    for overhead in [0, DEFAULT_HANDSHAKE_OVERHEAD] {
        let cfg = CompressionConfig { budgets: budgets.clone(), overhead, ..Default::default() };
        let report = compression_report(&corpus, &Algorithm::ALL, &cfg).unwrap();
        for (alg, sizes) in &sizes {
            let summary = report.get(*alg).unwrap();
            let mut straddles = false;
            for b in &budgets {
                let limit = 3 * b.get() as usize;
                let count = sizes.iter().filter(|&&s| s + overhead as usize <= limit).count();
                straddles |= count > 0 && count < sizes.len();
                assert_eq!(summary.fit_counts[&b.get()], count, "{alg} {b} {overhead}");
                assert_eq!(summary.fit_fractions[&b.get()], count as f64 / 200.0);
            }
            assert!(straddles, "corpus must straddle the budgets");
        }
    }
}

#[test]
fn summary_is_permutation_invariant() {
    let corpus = synthetic_corpus();
    let cfg = CompressionConfig::default();
    let mut outcomes: Vec<_> = corpus[..60].iter().map(|c| compress_chain(c, Algorithm::Zlib, &cfg).unwrap()).collect();
    let a = summarize(Algorithm::Zlib, &outcomes, &cfg.budgets, cfg.overhead);
    outcomes.reverse();
    outcomes.rotate_left(17);
    let b = summarize(Algorithm::Zlib, &outcomes, &cfg.budgets, cfg.overhead);
    assert_eq!(a.fit_counts, b.fit_counts);
    assert_eq!(a.ratio, b.ratio);
    assert_eq!(a.median_remaining, b.median_remaining);
}

#[test]
fn single_tiny_chain_fits() {
    let chain = load("certs/ecdsa256-selfsigned.pem");
    let cfg = CompressionConfig { budgets: vec![InitialSize::new(1357).unwrap()], overhead: 0, ..Default::default() };
    let r = compression_report([&chain], &[Algorithm::Brotli], &cfg).unwrap();
    assert_eq!(r.algorithms[0].fit_fractions[&1357], 1.0);
}

#[test]
fn csv_output() {
    let chain = load("chains/chain01.pem");
    let o = compress_chain(&chain, Algorithm::Zstd, &CompressionConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, [("chain01", &o)], 0).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("domain,algorithm,original_len,compressed_len,ratio,remaining,fits_3x1200,fits_3x1357\n"));
    assert!(text.contains(&format!("chain01,zstd,{},{}", o.original_len, o.compressed_len)));
}
