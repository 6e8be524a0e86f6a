//! Closed-loop behavior grid: every mock profile probed at every Initial
//! size, compared against its analytic expectation.

use std::collections::BTreeMap;
use std::io::Write;

use quicaudit_core::records::{DnsOutcome, ScanRecord};
use quicaudit_core::{classify_handshake, InitialSize, LimitPolicy, TraceOutcome};
use quicaudit_mock::{behavior_grid, BehaviorSpec, Expectation};
use quicaudit_probe::{apply_probe, probe_loopback, Link, ProbeConfig, ProbeOutput, TransportKind};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub profile: String,
    pub initial_size: u32,
    pub expected: String,
    pub observed: String,
    pub amplification_factor: Option<f64>,
    pub server_bytes: Option<u64>,
    pub matches: bool,
}

pub fn observe(output: &ProbeOutput, policy: LimitPolicy) -> Expectation {
    match (output.trace.outcome(), classify_handshake(&output.trace, policy)) {
        (TraceOutcome::Unreachable, _) | (_, Err(_)) => Expectation::Unreachable,
        (_, Ok(c)) => Expectation::Class(c.klass),
    }
}

fn probe_cfg(size: InitialSize) -> ProbeConfig {
    ProbeConfig::new("grid.test", "127.0.0.1:443".parse().expect("literal"), size).transport(TransportKind::Mock)
}

/// Probes one profile at one size in simulated time.
pub fn run_cell(spec: &BehaviorSpec, size: InitialSize, expected: Expectation, link: Link) -> (GridCell, ScanRecord) {
    let out = probe_loopback(&probe_cfg(size), spec, link);
    let mut record = ScanRecord::new(spec.name.clone(), 1, size.get(), DnsOutcome::resolved(vec![]));
    apply_probe(&mut record, &out, LimitPolicy::Data3xRfc9000);
    let (observed, factor, bytes) = match &out {
        Ok(o) => {
            let c = classify_handshake(&o.trace, LimitPolicy::Data3xRfc9000).ok();
            (observe(o, LimitPolicy::Data3xRfc9000), c.as_ref().map(|c| c.amplification_factor), c.map(|c| c.pre_validation_server_bytes))
        }
        Err(_) => (Expectation::Unreachable, None, None),
    };
    let cell = GridCell {
        profile: spec.name.clone(),
        initial_size: size.get(),
        expected: expected.to_string(),
        observed: observed.to_string(),
        amplification_factor: factor,
        server_bytes: bytes,
        matches: observed == expected,
    };
    (cell, record)
}

/// The whole grid, row by row.
pub fn run_grid(link: Link) -> (Vec<GridCell>, Vec<ScanRecord>) {
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for row in behavior_grid() {
        for (size, expected) in &row.expected {
            let (c, r) = run_cell(&row.spec, *size, *expected, link);
            cells.push(c);
            records.push(r);
        }
    }
    (cells, records)
}

pub fn write_cells_csv<W: Write>(w: W, cells: &[GridCell]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in cells {
        out.serialize(c)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassShare {
    pub initial_size: u32,
    pub class: String,
    pub count: usize,
    pub share: f64,
}

/// Per Initial size, the share of each observed outcome (class name or
/// `UNREACHABLE`). Input for stacked class bars.
pub fn class_shares(records: &[ScanRecord]) -> Vec<ClassShare> {
    let mut by: BTreeMap<u32, BTreeMap<String, usize>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.quic_outcome.is_some()) {
        let label = match (&r.quic_class, r.quic_outcome) {
            (Some(c), _) => c.klass.as_str().to_string(),
            (None, _) => "UNREACHABLE".to_string(),
        };
        *by.entry(r.initial_size).or_default().entry(label).or_default() += 1;
    }
    let mut out = Vec::new();
    for (size, counts) in by {
        let total: usize = counts.values().sum();
        for (class, count) in counts {
            out.push(ClassShare { initial_size: size, class, count, share: count as f64 / total as f64 });
        }
    }
    out
}

pub fn write_class_shares_csv<W: Write>(w: W, shares: &[ClassShare]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in shares {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}
