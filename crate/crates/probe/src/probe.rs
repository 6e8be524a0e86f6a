use std::net::{IpAddr, SocketAddr};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use quicaudit_core::records::{DnsOutcome, ScanRecord};
use quicaudit_core::{classify_handshake, InitialSize, LimitPolicy};
use quicaudit_mock::wire::{ConnId, CID_LEN};
use quicaudit_mock::{BehaviorSpec, MockEndpoint};
use tokio::net::UdpSocket;

use crate::config::{ProbeConfig, TransportKind};
use crate::driver::{drive_loopback, drive_udp, Link};
use crate::mock_client::MockClient;
use crate::quic::QuicClient;
use crate::session::{ClientSession, ProbeOutput};
use crate::ProbeError;

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn random_cid() -> ConnId {
    rand::random::<[u8; CID_LEN]>()
}

pub fn new_session(cfg: &ProbeConfig) -> Result<Box<dyn ClientSession>, ProbeError> {
    Ok(match cfg.transport {
        TransportKind::Mock => Box::new(MockClient::new(cfg, random_cid(), random_cid())),
        TransportKind::Quic => Box::new(QuicClient::new(cfg)?),
    })
}

/// One handshake attempt over UDP.
pub async fn probe_once(cfg: &ProbeConfig) -> Result<ProbeOutput, ProbeError> {
    cfg.validate()?;
    let bind: SocketAddr = match cfg.addr.ip() {
        IpAddr::V4(_) => "0.0.0.0:0".parse().expect("literal"),
        IpAddr::V6(_) => "[::]:0".parse().expect("literal"),
    };
    let socket = UdpSocket::bind(bind).await?;
    socket.connect(cfg.addr).await?;
    let mut session = new_session(cfg)?;
    drive_udp(session.as_mut(), &socket, cfg.deadline()).await?;
    session.finish()
}

/// One handshake attempt against an in-process mock endpoint with simulated
/// time. Connection IDs are fixed, so the result is reproducible.
pub fn probe_loopback(cfg: &ProbeConfig, spec: &BehaviorSpec, link: Link) -> Result<ProbeOutput, ProbeError> {
    cfg.validate()?;
    spec.validate().map_err(|e| ProbeError::Config(e.to_string()))?;
    let mut endpoint = MockEndpoint::new(spec.clone());
    let mut session: Box<dyn ClientSession> = Box::new(MockClient::new(cfg, *b"probedst", *b"probesrc"));
    drive_loopback(session.as_mut(), &mut endpoint, link, cfg.deadline().as_micros() as u64);
    session.finish()
}

#[derive(Debug)]
pub struct SweepItem {
    pub size: InitialSize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub output: Result<ProbeOutput, ProbeError>,
}

/// One probe per size in order, `spacing` apart.
pub async fn sweep(base: &ProbeConfig, sizes: &[InitialSize], spacing: Duration) -> Vec<SweepItem> {
    let mut items = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        if i > 0 && !spacing.is_zero() {
            tokio::time::sleep(spacing).await;
        }
        let cfg = base.clone().initial_size(size);
        let started_unix_ms = unix_ms();
        let output = probe_once(&cfg).await;
        items.push(SweepItem { size, started_unix_ms, finished_unix_ms: unix_ms(), output });
    }
    items
}

pub fn sweep_loopback(base: &ProbeConfig, spec: &BehaviorSpec, sizes: &[InitialSize], link: Link) -> Vec<SweepItem> {
    sizes
        .iter()
        .map(|&size| {
            let started_unix_ms = unix_ms();
            let output = probe_loopback(&base.clone().initial_size(size), spec, link);
            SweepItem { size, started_unix_ms, finished_unix_ms: unix_ms(), output }
        })
        .collect()
}

/// Fills the QUIC columns of `record` from a probe result.
pub fn apply_probe(record: &mut ScanRecord, output: &Result<ProbeOutput, ProbeError>, policy: LimitPolicy) {
    match output {
        Ok(out) => {
            let trace = &out.trace;
            record.quic_outcome = Some(trace.outcome());
            record.quic_reachable = trace.server_datagrams().next().is_some();
            match classify_handshake(trace, policy) {
                Ok(c) => record.quic_class = Some(c),
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            record.quic_outcome = Some(quicaudit_core::TraceOutcome::Unreachable);
            record.error = Some(e.to_string());
        }
    }
}

pub fn sweep_records(domain: &str, rank: u64, dns: &DnsOutcome, items: &[SweepItem], policy: LimitPolicy) -> Vec<ScanRecord> {
    items
        .iter()
        .map(|item| {
            let mut r = ScanRecord::new(domain, rank, item.size.get(), dns.clone());
            r.started_unix_ms = item.started_unix_ms;
            r.finished_unix_ms = item.finished_unix_ms;
            apply_probe(&mut r, &item.output, policy);
            r
        })
        .collect()
}
