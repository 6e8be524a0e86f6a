use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use quicaudit_core::records::DnsStatus;
use quicaudit_probe::dns::{parse_resolver, resolve_domain, resolve_with, DnsConfig, StubAnswer, StubResolver};

async fn stub() -> StubResolver {
    let zone = HashMap::from([
        ("a.test".to_string(), StubAnswer::A(vec![Ipv4Addr::new(127, 0, 0, 7), Ipv4Addr::new(127, 0, 0, 8)])),
        ("servfail.test".to_string(), StubAnswer::ServFail),
        ("refused.test".to_string(), StubAnswer::Refused),
        ("nodata.test".to_string(), StubAnswer::NoData),
        ("slow.test".to_string(), StubAnswer::Delay(Duration::from_secs(11), Box::new(StubAnswer::A(vec![Ipv4Addr::LOCALHOST])))),
        ("quick.test".to_string(), StubAnswer::Delay(Duration::from_millis(50), Box::new(StubAnswer::A(vec![Ipv4Addr::LOCALHOST])))),
        ("dropped.test".to_string(), StubAnswer::Drop),
    ]);
    StubResolver::start("127.0.0.1:0".parse().unwrap(), zone, StubAnswer::NxDomain).await.unwrap()
}

#[tokio::test]
async fn a_record_resolves() {
    let s = stub().await;
    let out = resolve_domain("A.test", s.local_addr()).await;
    assert_eq!(out.status, DnsStatus::ARecord);
    assert_eq!(out.addresses, vec![Ipv4Addr::new(127, 0, 0, 7), Ipv4Addr::new(127, 0, 0, 8)]);
}

#[tokio::test]
async fn response_codes_map_to_taxonomy() {
    let s = stub().await;
    for (name, status) in [
        ("servfail.test", DnsStatus::Servfail),
        ("refused.test", DnsStatus::Refused),
        ("unknown.test", DnsStatus::Nxdomain),
        ("nodata.test", DnsStatus::Nxdomain),
        ("quick.test", DnsStatus::ARecord),
    ] {
        assert_eq!(resolve_domain(name, s.local_addr()).await.status, status, "{name}");
    }
}

#[tokio::test(start_paused = true)]
async fn eleven_second_delay_times_out_at_ten() {
    let s = stub().await;
    let start = tokio::time::Instant::now();
    let out = resolve_domain("slow.test", s.local_addr()).await;
    assert_eq!(out.status, DnsStatus::Timeout);
    assert_eq!(start.elapsed(), Duration::from_secs(10));
}

#[tokio::test]
async fn dropped_queries_are_retransmitted_then_time_out() {
    let s = stub().await;
    let cfg = DnsConfig { timeout: Duration::from_millis(300), ..DnsConfig::new(s.local_addr()) };
    let out = resolve_with("dropped.test", &cfg).await;
    assert_eq!(out.status, DnsStatus::Timeout);
    assert_eq!(s.queries(), 3);
}

#[tokio::test]
async fn unreachable_resolver_is_timeout() {
    let closed: SocketAddr = {
        let sock = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.local_addr().unwrap()
    };
    let cfg = DnsConfig { timeout: Duration::from_millis(300), ..DnsConfig::new(closed) };
    assert_eq!(resolve_with("a.test", &cfg).await.status, DnsStatus::Timeout);
}

#[test]
fn resolver_address_parsing() {
    assert_eq!(parse_resolver("127.0.0.1").unwrap(), "127.0.0.1:53".parse().unwrap());
    assert_eq!(parse_resolver("127.0.0.1:5353").unwrap(), "127.0.0.1:5353".parse().unwrap());
    assert!(parse_resolver("resolver").is_err());
}
