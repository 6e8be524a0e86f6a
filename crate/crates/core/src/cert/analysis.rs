use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CertRecord, CertRole, ChainRecord, FieldSizes, KeyAlgo, TrustStore};
use crate::stats;
use crate::trace::InitialSize;

/// SAN share threshold in permille (28.9 %).
pub const CRUISE_LINER_PERMILLE: u64 = 289;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAnatomy {
    pub certs: usize,
    /// Field name to statistics, in certificate order.
    pub fields: Vec<(String, FieldStats)>,
    pub structural_overhead: FieldStats,
}

impl RoleAnatomy {
    pub fn field(&self, name: &str) -> Option<FieldStats> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// Field names ordered by mean size, largest first.
    pub fn ranking(&self) -> Vec<&str> {
        let mut v: Vec<_> = self.fields.iter().collect();
        v.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean));
        v.into_iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomySummary {
    pub leaf: Option<RoleAnatomy>,
    pub non_leaf: Option<RoleAnatomy>,
}

/// Per-role field size samples; merge shards with [`AnatomyAccumulator::merge`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnatomyAccumulator {
    leaf: Vec<[u32; 10]>,
    non_leaf: Vec<[u32; 10]>,
}

impl AnatomyAccumulator {
    pub fn add_chain(&mut self, chain: &ChainRecord) {
        chain.certs.iter().for_each(|c| self.add_cert(c));
    }

    pub fn add_cert(&mut self, cert: &CertRecord) {
        let mut row = [0u32; 10];
        row[..9].copy_from_slice(&cert.field_sizes.values());
        row[9] = cert.structural_overhead;
        match cert.role {
            CertRole::Leaf => self.leaf.push(row),
            _ => self.non_leaf.push(row),
        }
    }

    pub fn merge(mut self, other: AnatomyAccumulator) -> AnatomyAccumulator {
        self.leaf.extend(other.leaf);
        self.non_leaf.extend(other.non_leaf);
        self
    }

    pub fn summary(&self) -> AnatomySummary {
        AnatomySummary { leaf: summarize(&self.leaf), non_leaf: summarize(&self.non_leaf) }
    }
}

fn summarize(rows: &[[u32; 10]]) -> Option<RoleAnatomy> {
    if rows.is_empty() {
        return None;
    }
    let col = |i: usize| -> FieldStats {
        let v: Vec<f64> = rows.iter().map(|r| f64::from(r[i])).collect();
        FieldStats { mean: stats::mean(&v).unwrap_or(0.0), median: stats::median(&v).unwrap_or(0.0) }
    };
    Some(RoleAnatomy {
        certs: rows.len(),
        fields: FieldSizes::NAMES.iter().enumerate().map(|(i, n)| (n.to_string(), col(i))).collect(),
        structural_overhead: col(9),
    })
}

pub fn field_anatomy<'a>(chains: impl IntoIterator<Item = &'a ChainRecord>) -> AnatomySummary {
    let mut acc = AnatomyAccumulator::default();
    chains.into_iter().for_each(|c| acc.add_chain(c));
    acc.summary()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossSignFinding {
    pub index: usize,
    pub subject: String,
    pub issuer: String,
    /// Bytes saved by leaving the certificate out, the anchor being trusted already.
    pub removable_bytes: u32,
    pub recommendation: String,
}

/// Non-leaf certificates whose subject and key match a trusted root but that
/// were issued by someone else.
pub fn detect_cross_signed(chain: &ChainRecord, store: &TrustStore) -> Vec<CrossSignFinding> {
    chain
        .certs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| c.issuer != c.subject && store.contains(&c.subject, &c.spki_digest))
        .map(|(index, c)| CrossSignFinding {
            index,
            subject: c.subject_string(),
            issuer: c.issuer_string(),
            removable_bytes: c.der_len,
            recommendation: format!(
                "omit the cross-signed certificate; clients already trust the self-signed {}",
                c.subject_string()
            ),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorFinding {
    pub index: usize,
    pub subject: String,
    pub removable_bytes: u32,
}

pub fn detect_included_anchor(chain: &ChainRecord) -> Vec<AnchorFinding> {
    chain
        .certs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.self_signed)
        .map(|(index, c)| AnchorFinding { index, subject: c.subject_string(), removable_bytes: c.der_len })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentChainGroup {
    pub parent_chain_id: String,
    pub services: usize,
    pub coverage: f64,
    pub non_leaf_len: u32,
    pub leaf_median: f64,
    pub leaf_max: u32,
    pub subjects: Vec<String>,
}

/// Groups correctly ordered chains by their parent chain, largest group first.
pub fn parent_chain_group<'a>(chains: impl IntoIterator<Item = &'a ChainRecord>) -> Vec<ParentChainGroup> {
    let mut groups: BTreeMap<&str, Vec<&ChainRecord>> = BTreeMap::new();
    let mut total = 0usize;
    for c in chains.into_iter().filter(|c| c.ordered_correctly) {
        total += 1;
        groups.entry(&c.parent_chain_id).or_default().push(c);
    }
    let mut out: Vec<ParentChainGroup> = groups
        .into_iter()
        .map(|(id, members)| {
            let leaves: Vec<f64> = members.iter().filter_map(|c| c.leaf()).map(|l| f64::from(l.der_len)).collect();
            ParentChainGroup {
                parent_chain_id: id.to_owned(),
                services: members.len(),
                coverage: members.len() as f64 / total as f64,
                non_leaf_len: members[0].non_leaf_len(),
                leaf_median: stats::median(&leaves).unwrap_or(0.0),
                leaf_max: leaves.iter().fold(0.0f64, |a, b| a.max(*b)) as u32,
                subjects: members[0].certs.iter().skip(1).map(CertRecord::subject_string).collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.services.cmp(&a.services).then_with(|| a.parent_chain_id.cmp(&b.parent_chain_id)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitFit {
    pub fits: bool,
    pub budget: u64,
    pub used: u64,
}

pub fn limit_fit(chain: &ChainRecord, initial_size: InitialSize, overhead: u32) -> LimitFit {
    let used = u64::from(chain.total_len) + u64::from(overhead);
    let budget = initial_size.budget();
    LimitFit { fits: used <= budget, budget, used }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CruiseLiner {
    pub san_bytes: u32,
    pub der_len: u32,
    pub san_share: f64,
    pub flagged: bool,
}

/// SAN share of the leaf. `None` for an empty chain.
pub fn cruise_liner_score(chain: &ChainRecord) -> Option<CruiseLiner> {
    let leaf = chain.leaf()?;
    let (san, len) = (u64::from(leaf.san_bytes), u64::from(leaf.der_len));
    Some(CruiseLiner {
        san_bytes: leaf.san_bytes,
        der_len: leaf.der_len,
        san_share: san as f64 / len as f64,
        flagged: san * 1000 >= CRUISE_LINER_PERMILLE * len,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyAlgoRow {
    pub role: CertRole,
    pub algo: KeyAlgo,
    pub count: usize,
    /// Share within the role.
    pub share: f64,
}

/// Key algorithm frequencies per role, keeping cells above `min_share`.
pub fn key_algo_stats<'a>(chains: impl IntoIterator<Item = &'a ChainRecord>, min_share: f64) -> Vec<KeyAlgoRow> {
    let mut counts: BTreeMap<(CertRole, KeyAlgo), usize> = BTreeMap::new();
    let mut per_role: BTreeMap<CertRole, usize> = BTreeMap::new();
    for c in chains.into_iter().flat_map(|c| &c.certs) {
        *counts.entry((c.role, c.key_algo)).or_default() += 1;
        *per_role.entry(c.role).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((role, algo), count)| KeyAlgoRow { role, algo, count, share: count as f64 / per_role[&role] as f64 })
        .filter(|r| r.share > min_share)
        .collect()
}
