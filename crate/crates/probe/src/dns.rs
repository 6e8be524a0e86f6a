//! IPv4 resolution over plain UDP DNS, reduced to a five-way outcome.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use hickory_proto::op::{Message, MessageType, OpCode, Query, ResponseCode};
use hickory_proto::rr::{rdata::A, Name, RData, Record, RecordType};
use quicaudit_core::records::{DnsOutcome, DnsStatus};
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;
use tokio::time::{timeout_at, Instant};

pub const DEFAULT_DNS_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_RESOLVER: SocketAddr = SocketAddr::new(std::net::IpAddr::V4(Ipv4Addr::new(1, 1, 1, 1)), 53);
/// Environment variable overriding the resolver address.
pub const RESOLVER_ENV: &str = "QUICAUDIT_RESOLVER";

#[derive(Debug, Clone, Copy)]
pub struct DnsConfig {
    pub resolver: SocketAddr,
    pub timeout: Duration,
    /// Queries sent within `timeout`, evenly spaced.
    pub attempts: u32,
}

impl DnsConfig {
    pub fn new(resolver: SocketAddr) -> Self {
        DnsConfig { resolver, timeout: DEFAULT_DNS_TIMEOUT, attempts: 3 }
    }

    /// Resolver from [`RESOLVER_ENV`], else [`DEFAULT_RESOLVER`].
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(RESOLVER_ENV) {
            Ok(v) => parse_resolver(&v).map(Self::new),
            Err(_) => Ok(Self::new(DEFAULT_RESOLVER)),
        }
    }
}

/// Accepts `ip` or `ip:port`.
pub fn parse_resolver(s: &str) -> Result<SocketAddr, String> {
    s.parse::<SocketAddr>()
        .or_else(|_| s.parse::<std::net::IpAddr>().map(|ip| SocketAddr::new(ip, 53)))
        .map_err(|_| format!("invalid resolver address {s:?}"))
}

pub async fn resolve_domain(name: &str, resolver: SocketAddr) -> DnsOutcome {
    resolve_with(name, &DnsConfig::new(resolver)).await
}

pub async fn resolve_with(name: &str, cfg: &DnsConfig) -> DnsOutcome {
    let Ok(qname) = Name::from_ascii(name).map(|mut n| {
        n.set_fqdn(true);
        n
    }) else {
        return DnsOutcome::failed(DnsStatus::Nxdomain);
    };
    let id: u16 = rand::random();
    let mut query = Message::new();
    query
        .set_id(id)
        .set_message_type(MessageType::Query)
        .set_op_code(OpCode::Query)
        .set_recursion_desired(true)
        .add_query(Query::query(qname, RecordType::A));
    let Ok(wire) = query.to_vec() else {
        return DnsOutcome::failed(DnsStatus::Nxdomain);
    };
    let bind: SocketAddr = if cfg.resolver.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
    let Ok(socket) = UdpSocket::bind(bind).await else {
        return DnsOutcome::failed(DnsStatus::Timeout);
    };
    if socket.connect(cfg.resolver).await.is_err() {
        return DnsOutcome::failed(DnsStatus::Timeout);
    }
    let start = Instant::now();
    let end = start + cfg.timeout;
    let attempts = cfg.attempts.max(1);
    let mut buf = vec![0u8; 4096];
    for attempt in 1..=attempts {
        if socket.send(&wire).await.is_err() {
            return DnsOutcome::failed(DnsStatus::Timeout);
        }
        let resend_at = (start + cfg.timeout * attempt / attempts).min(end);
        loop {
            match timeout_at(resend_at, socket.recv(&mut buf)).await {
                Err(_) => break,
                Ok(Err(_)) => return DnsOutcome::failed(DnsStatus::Timeout),
                Ok(Ok(n)) => {
                    let Ok(msg) = Message::from_vec(&buf[..n]) else { continue };
                    if msg.id() != id || msg.message_type() != MessageType::Response {
                        continue;
                    }
                    return outcome(&msg);
                }
            }
        }
    }
    DnsOutcome::failed(DnsStatus::Timeout)
}

fn outcome(msg: &Message) -> DnsOutcome {
    match msg.response_code() {
        ResponseCode::NoError => {
            let addresses: Vec<Ipv4Addr> = msg
                .answers()
                .iter()
                .filter_map(|r| match r.data() {
                    RData::A(a) => Some(a.0),
                    _ => None,
                })
                .collect();
            if addresses.is_empty() {
                DnsOutcome::failed(DnsStatus::Nxdomain)
            } else {
                DnsOutcome::resolved(addresses)
            }
        }
        ResponseCode::NXDomain => DnsOutcome::failed(DnsStatus::Nxdomain),
        ResponseCode::Refused => DnsOutcome::failed(DnsStatus::Refused),
        _ => DnsOutcome::failed(DnsStatus::Servfail),
    }
}

/// Scripted reply of a [`StubResolver`].
#[derive(Debug, Clone)]
pub enum StubAnswer {
    A(Vec<Ipv4Addr>),
    ServFail,
    NxDomain,
    Refused,
    NoData,
    Delay(Duration, Box<StubAnswer>),
    Drop,
}

/// Local authoritative-style DNS server for tests and offline campaigns.
pub struct StubResolver {
    addr: SocketAddr,
    queries: Arc<AtomicUsize>,
    task: JoinHandle<()>,
}

impl StubResolver {
    /// Serves `zone` (names without trailing dot, any case); other names get
    /// `fallback`.
    pub async fn start(bind: SocketAddr, zone: HashMap<String, StubAnswer>, fallback: StubAnswer) -> std::io::Result<Self> {
        let socket = Arc::new(UdpSocket::bind(bind).await?);
        let addr = socket.local_addr()?;
        let zone: HashMap<String, StubAnswer> = zone.into_iter().map(|(k, v)| (normalize(&k), v)).collect();
        let queries = Arc::new(AtomicUsize::new(0));
        let counter = queries.clone();
        let task = tokio::spawn(async move {
            let mut buf = vec![0u8; 4096];
            loop {
                let Ok((n, peer)) = socket.recv_from(&mut buf).await else { continue };
                let Ok(msg) = Message::from_vec(&buf[..n]) else { continue };
                counter.fetch_add(1, Ordering::Relaxed);
                let name = msg.queries().first().map(|q| normalize(&q.name().to_ascii())).unwrap_or_default();
                let answer = zone.get(&name).unwrap_or(&fallback).clone();
                let socket = socket.clone();
                tokio::spawn(async move {
                    if let Some(reply) = respond(&msg, answer).await {
                        let _ = socket.send_to(&reply, peer).await;
                    }
                });
            }
        });
        Ok(StubResolver { addr, queries, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }
}

impl Drop for StubResolver {
    fn drop(&mut self) {
        self.task.abort();
    }
}

fn normalize(name: &str) -> String {
    name.trim_end_matches('.').to_ascii_lowercase()
}

async fn respond(query: &Message, mut answer: StubAnswer) -> Option<Vec<u8>> {
    while let StubAnswer::Delay(d, inner) = answer {
        tokio::time::sleep(d).await;
        answer = *inner;
    }
    let mut reply = Message::new();
    reply
        .set_id(query.id())
        .set_message_type(MessageType::Response)
        .set_op_code(OpCode::Query)
        .set_recursion_desired(query.recursion_desired())
        .add_queries(query.queries().to_vec());
    match answer {
        StubAnswer::A(addrs) => {
            let name = query.queries().first()?.name().clone();
            for a in addrs {
                reply.add_answer(Record::from_rdata(name.clone(), 60, RData::A(A(a))));
            }
        }
        StubAnswer::ServFail => {
            reply.set_response_code(ResponseCode::ServFail);
        }
        StubAnswer::NxDomain => {
            reply.set_response_code(ResponseCode::NXDomain);
        }
        StubAnswer::Refused => {
            reply.set_response_code(ResponseCode::Refused);
        }
        StubAnswer::NoData => {}
        StubAnswer::Drop => return None,
        StubAnswer::Delay(..) => unreachable!("unwrapped above"),
    }
    reply.to_vec().ok()
}
