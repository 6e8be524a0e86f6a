use std::path::PathBuf;

use quicaudit_core::cert::{parse_chain, CertRole, ChainSource, KeyAlgo};
use serde::Deserialize;

#[derive(Deserialize)]
struct Entry {
    der_len: u32,
    fields: std::collections::BTreeMap<String, u32>,
    overhead: u32,
    san_bytes: u32,
    file: String,
    index: usize,
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn load(rel: &str) -> quicaudit_core::cert::ChainRecord {
    let blob = std::fs::read(fixtures().join(rel)).unwrap();
    parse_chain(&blob, rel, ChainSource::File).unwrap()
}

#[test]
fn field_sizes_match_asn1parse_oracle() {
    let oracle: Vec<Entry> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("der_oracle.json")).unwrap()).unwrap();
    assert!(oracle.len() >= 70);
    for e in &oracle {
        let chain = load(&e.file);
        let c = &chain.certs[e.index];
        let ctx = format!("{}#{}", e.file, e.index);
        assert_eq!(c.der_len, e.der_len, "{ctx}");
        for (name, size) in &e.fields {
            assert_eq!(c.field_sizes.get(name), Some(*size), "{ctx} {name}");
        }
        assert_eq!(c.structural_overhead, e.overhead, "{ctx}");
        assert_eq!(c.san_bytes, e.san_bytes, "{ctx}");
        assert_eq!(c.field_sizes.total() + c.structural_overhead, c.der_len, "{ctx}");
    }
}

#[test]
fn every_fixture_round_trips() {
    for dir in ["certs", "chains", "realworld", "truststore"] {
        for entry in std::fs::read_dir(fixtures().join(dir)).unwrap() {
            let path = entry.unwrap().path();
            let chain = parse_chain(&std::fs::read(&path).unwrap(), "", ChainSource::File).unwrap();
            for c in &chain.certs {
                assert_eq!(c.reserialize().unwrap(), c.der, "{}", path.display());
            }
            let again = parse_chain(&chain.to_der(), "", ChainSource::File).unwrap();
            assert_eq!(again.certs, chain.certs);
            let from_pem = parse_chain(chain.to_pem().as_bytes(), "", ChainSource::File).unwrap();
            assert_eq!(from_pem.total_len, chain.total_len);
        }
    }
}

#[test]
fn minimal_self_signed_is_root() {
    let chain = load("certs/ecdsa256-selfsigned.pem");
    let c = &chain.certs[0];
    assert_eq!(c.role, CertRole::Root);
    assert!(c.self_signed);
    assert_eq!(c.key_algo, KeyAlgo::Ecdsa256);
    assert_eq!(c.field_sizes.extensions, 0);
}

#[test]
fn three_cert_chains() {
    for (file, leaf_algo, root_algo) in [
        ("certs/chain3-rsa.pem", KeyAlgo::Rsa2048, KeyAlgo::Rsa4096),
        ("certs/chain3-ecdsa.pem", KeyAlgo::Ecdsa256, KeyAlgo::Ecdsa384),
    ] {
        let chain = load(file);
        assert_eq!(chain.certs.len(), 3);
        assert_eq!(chain.total_len, chain.certs.iter().map(|c| c.der_len).sum::<u32>());
        assert!(chain.ordered_correctly);
        let roles: Vec<_> = chain.certs.iter().map(|c| c.role).collect();
        assert_eq!(roles, [CertRole::Leaf, CertRole::Intermediate, CertRole::Root]);
        assert_eq!(chain.certs[0].key_algo, leaf_algo);
        assert_eq!(chain.certs[2].key_algo, root_algo);
        assert!(!chain.certs[0].self_signed && !chain.certs[1].self_signed);
    }
}

#[test]
fn same_name_without_valid_signature_is_not_self_signed() {
    // The cross-signed twin carries the root's subject but a foreign issuer.
    let chain = load("certs/chain3-cross-signed.pem");
    assert!(!chain.certs[2].self_signed);
    // Tamper with the signature of a genuinely self-signed root.
    let mut der = load("truststore/synthetic-root-x1.pem").certs[0].der.clone();
    let n = der.len();
    der[n - 10] ^= 0x55;
    let c = quicaudit_core::cert::CertRecord::from_der(&der).unwrap();
    assert_eq!(c.issuer, c.subject);
    assert!(!c.self_signed);
}

#[test]
fn real_world_chains_parse() {
    let aws = load("realworld/aws_amazon_com.pem");
    assert_eq!(aws.certs.len(), 4);
    assert!(aws.ordered_correctly);
    let le = load("realworld/letsencrypt_org.pem");
    assert_eq!(le.certs.len(), 2);
    assert_eq!(le.certs[0].role, CertRole::Leaf);
}
