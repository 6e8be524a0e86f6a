//! X.509 structure walk: field byte spans, key type, SAN extension and
//! self-signature check.

use ring::signature;
use sha2::{Digest, Sha256};

use crate::der::{self, oid_to_string, DerError, Reader, Tlv};

use super::{FieldSizes, KeyAlgo};

const OID_RSA: &str = "1.2.840.113549.1.1.1";
const OID_EC: &str = "1.2.840.10045.2.1";
const OID_P256: &str = "1.2.840.10045.3.1.7";
const OID_P384: &str = "1.3.132.0.34";
const OID_ED25519: &str = "1.3.101.112";
const OID_SAN: &str = "2.5.29.17";

pub(crate) struct Parsed {
    pub field_sizes: FieldSizes,
    pub overhead: u32,
    pub subject: Vec<u8>,
    pub issuer: Vec<u8>,
    pub spki_digest: [u8; 32],
    pub key_algo: KeyAlgo,
    pub key_bits: u32,
    pub san_bytes: u32,
    pub san_count: u32,
    pub self_signed: bool,
}

fn len32(t: &Tlv<'_>) -> u32 {
    t.total_len() as u32
}

pub(crate) fn parse(der_bytes: &[u8]) -> Result<Parsed, DerError> {
    let cert = der::parse_single(der_bytes)?.expect(der::TAG_SEQUENCE)?;
    let mut outer = Reader::new(cert.value, cert.value_offset());
    let tbs = outer.read_tag(der::TAG_SEQUENCE)?;
    let sig_alg = outer.read_tag(der::TAG_SEQUENCE)?;
    let sig = outer.read_tag(der::TAG_BIT_STRING)?;
    if !outer.is_empty() {
        return Err(DerError::TrailingBytes { offset: outer.offset(), trailing: 0 });
    }

    let mut r = Reader::new(tbs.value, tbs.value_offset());
    let version = r.read_optional(der::context(0))?;
    let serial = r.read_tag(der::TAG_INTEGER)?;
    let tbs_sig_alg = r.read_tag(der::TAG_SEQUENCE)?;
    let issuer = r.read_tag(der::TAG_SEQUENCE)?;
    let validity = r.read_tag(der::TAG_SEQUENCE)?;
    let subject = r.read_tag(der::TAG_SEQUENCE)?;
    let spki = r.read_tag(der::TAG_SEQUENCE)?;
    let mut extensions = None;
    while !r.is_empty() {
        let t = r.read()?;
        // issuerUniqueID [1] and subjectUniqueID [2] stay in the overhead bucket.
        if t.tag == der::context(3) {
            extensions = Some(t);
        }
    }

    let field_sizes = FieldSizes {
        version: version.as_ref().map_or(0, len32),
        serial: len32(&serial),
        signature_algo: len32(&tbs_sig_alg) + len32(&sig_alg),
        issuer: len32(&issuer),
        validity: len32(&validity),
        subject: len32(&subject),
        public_key: len32(&spki),
        extensions: extensions.as_ref().map_or(0, len32),
        signature: len32(&sig),
    };
    let overhead = der_bytes.len() as u32 - field_sizes.total();

    let (key_algo, key_bits, key_bytes) = key_info(&spki)?;
    let (san_bytes, san_count) = match &extensions {
        Some(ext) => san_info(ext)?,
        None => (0, 0),
    };
    let sig_value = bit_string_bytes(&sig)?;
    let self_signed = issuer.raw == subject.raw
        && verify(&sig_alg, &spki, key_bytes, tbs.raw, sig_value).unwrap_or(false);

    Ok(Parsed {
        field_sizes,
        overhead,
        subject: subject.raw.to_vec(),
        issuer: issuer.raw.to_vec(),
        spki_digest: Sha256::digest(spki.raw).into(),
        key_algo,
        key_bits,
        san_bytes,
        san_count,
        self_signed,
    })
}

fn bit_string_bytes<'a>(t: &Tlv<'a>) -> Result<&'a [u8], DerError> {
    match t.value.split_first() {
        Some((0, rest)) => Ok(rest),
        _ => Err(DerError::Missing { offset: t.offset, what: "byte-aligned BIT STRING" }),
    }
}

fn strip_int(bytes: &[u8]) -> &[u8] {
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    &bytes[skip..]
}

fn key_info<'a>(spki: &Tlv<'a>) -> Result<(KeyAlgo, u32, &'a [u8]), DerError> {
    let mut r = Reader::new(spki.value, spki.value_offset());
    let alg = r.read_tag(der::TAG_SEQUENCE)?;
    let key = bit_string_bytes(&r.read_tag(der::TAG_BIT_STRING)?)?;
    let mut ar = Reader::new(alg.value, alg.value_offset());
    let oid = oid_to_string(ar.read_tag(der::TAG_OID)?.value);
    let param = ar.read_optional(der::TAG_OID)?.map(|t| oid_to_string(t.value));
    let out = match (oid.as_str(), param.as_deref()) {
        (OID_RSA, _) => {
            let rsa = der::parse_single(key)?.expect(der::TAG_SEQUENCE)?;
            let modulus = Reader::new(rsa.value, 0).read_tag(der::TAG_INTEGER)?;
            let m = strip_int(modulus.value);
            let bits = m.first().map_or(0, |b| (m.len() as u32) * 8 - b.leading_zeros());
            let algo = match bits {
                2048 => KeyAlgo::Rsa2048,
                4096 => KeyAlgo::Rsa4096,
                _ => KeyAlgo::Other,
            };
            (algo, bits, key)
        }
        (OID_EC, Some(OID_P256)) => (KeyAlgo::Ecdsa256, 256, key),
        (OID_EC, Some(OID_P384)) => (KeyAlgo::Ecdsa384, 384, key),
        (OID_ED25519, _) => (KeyAlgo::Other, 256, key),
        _ => (KeyAlgo::Other, 0, key),
    };
    Ok(out)
}

fn san_info(ext: &Tlv<'_>) -> Result<(u32, u32), DerError> {
    let seq = der::parse_single(ext.value)?.expect(der::TAG_SEQUENCE)?;
    let seq = Tlv { offset: ext.value_offset(), ..seq };
    for e in seq.children()? {
        let parts = e.children()?;
        let (Some(oid), Some(value)) = (parts.first(), parts.last()) else {
            continue;
        };
        if oid.tag == der::TAG_OID && oid_to_string(oid.value) == OID_SAN {
            let names = der::parse_single(value.value)?.children()?.len();
            return Ok((e.total_len() as u32, names as u32));
        }
    }
    Ok((0, 0))
}

fn verify(sig_alg: &Tlv<'_>, spki: &Tlv<'_>, key: &[u8], msg: &[u8], sig: &[u8]) -> Option<bool> {
    let mut r = Reader::new(sig_alg.value, 0);
    let sig_oid = oid_to_string(r.read_tag(der::TAG_OID).ok()?.value);
    let mut sr = Reader::new(spki.value, 0);
    let alg = sr.read_tag(der::TAG_SEQUENCE).ok()?;
    let mut ar = Reader::new(alg.value, 0);
    ar.read().ok()?;
    let curve = ar.read_optional(der::TAG_OID).ok()?.map(|t| oid_to_string(t.value));

    let algorithm: &dyn signature::VerificationAlgorithm = match (sig_oid.as_str(), curve.as_deref()) {
        ("1.2.840.113549.1.1.11", _) => &signature::RSA_PKCS1_2048_8192_SHA256,
        ("1.2.840.113549.1.1.12", _) => &signature::RSA_PKCS1_2048_8192_SHA384,
        ("1.2.840.113549.1.1.13", _) => &signature::RSA_PKCS1_2048_8192_SHA512,
        ("1.2.840.113549.1.1.5", _) => &signature::RSA_PKCS1_1024_8192_SHA1_FOR_LEGACY_USE_ONLY,
        ("1.2.840.10045.4.3.2", Some(OID_P256)) => &signature::ECDSA_P256_SHA256_ASN1,
        ("1.2.840.10045.4.3.2", Some(OID_P384)) => &signature::ECDSA_P384_SHA256_ASN1,
        ("1.2.840.10045.4.3.3", Some(OID_P256)) => &signature::ECDSA_P256_SHA384_ASN1,
        ("1.2.840.10045.4.3.3", Some(OID_P384)) => &signature::ECDSA_P384_SHA384_ASN1,
        (OID_ED25519, _) => &signature::ED25519,
        _ => return None,
    };
    Some(signature::UnparsedPublicKey::new(algorithm, key).verify(msg, sig).is_ok())
}

/// Renders a DER Name as `CN=...,O=...` for common attribute types.
pub fn name_to_string(name_der: &[u8]) -> String {
    let Ok(name) = der::parse_single(name_der) else {
        return hex::encode(name_der);
    };
    let mut parts = Vec::new();
    for rdn in name.children().unwrap_or_default() {
        for atv in rdn.children().unwrap_or_default() {
            let kids = atv.children().unwrap_or_default();
            let (Some(oid), Some(val)) = (kids.first(), kids.get(1)) else { continue };
            let key = match oid_to_string(oid.value).as_str() {
                "2.5.4.3" => "CN".to_owned(),
                "2.5.4.6" => "C".to_owned(),
                "2.5.4.7" => "L".to_owned(),
                "2.5.4.8" => "ST".to_owned(),
                "2.5.4.10" => "O".to_owned(),
                "2.5.4.11" => "OU".to_owned(),
                other => other.to_owned(),
            };
            parts.push(format!("{key}={}", String::from_utf8_lossy(val.value)));
        }
    }
    parts.join(",")
}
