use std::net::{IpAddr, Ipv4Addr};
use std::time::Duration;

use quicaudit_probe::fixture::{HttpFixture, Reply, Routes, Scheme};
use quicaudit_probe::https::{collect_https_chain, HttpsConfig, HttpsError, RedirectKind};

const LOCAL: IpAddr = IpAddr::V4(Ipv4Addr::LOCALHOST);

struct Site {
    fixture: HttpFixture,
    leaf: Vec<u8>,
}

fn site(routes: &[(Scheme, &str, Reply)]) -> Site {
    let ck = rcgen::generate_simple_self_signed(vec!["a.test".to_string(), "b.test".to_string()]).unwrap();
    let leaf = ck.cert.der().to_vec();
    let routes: Routes = routes.iter().map(|(s, p, r)| ((*s, p.to_string()), r.clone())).collect();
    let fixture = HttpFixture::start(LOCAL, routes, vec![leaf.clone()], ck.key_pair.serialize_der()).unwrap();
    Site { fixture, leaf }
}

fn cfg(s: &Site) -> HttpsConfig {
    HttpsConfig {
        http_port: s.fixture.http_addr().port(),
        https_port: s.fixture.https_addr().port(),
        io_timeout: Duration::from_secs(3),
        connect_timeout: Duration::from_secs(3),
        ..HttpsConfig::default()
    }
    .with_host("a.test", LOCAL)
    .with_host("b.test", LOCAL)
}

#[test]
fn no_redirect_yields_single_https_hop() {
    let s = site(&[(Scheme::Https, "/", Reply::ok("hello"))]);
    let mut c = cfg(&s);
    c.http_port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let r = collect_https_chain("a.test", &c);
    assert!(r.error.is_none(), "{:?}", r.error);
    let https: Vec<_> = r.hops.iter().filter(|h| h.chain.is_some()).collect();
    assert_eq!(https.len(), 1);
    assert_eq!(https[0].status, Some(200));
    let chain = r.chain.unwrap();
    assert_eq!(chain.certs.len(), 1);
    assert_eq!(chain.total_len as usize, s.leaf.len());
}

#[test]
fn permanent_redirect_to_https_is_two_hops_one_chain() {
    let s = site(&[
        (Scheme::Http, "/", Reply::redirect(301, "https://a.test/")),
        (Scheme::Https, "/", Reply::ok("secure")),
    ]);
    let r = collect_https_chain("a.test", &cfg(&s));
    assert!(r.error.is_none(), "{:?}", r.error);
    assert_eq!(r.hops.len(), 2);
    assert_eq!(r.hops[0].status, Some(301));
    assert!(r.hops[0].chain.is_none());
    assert_eq!(r.hops[1].via, RedirectKind::Status);
    assert_eq!(r.hops.iter().filter(|h| h.chain.is_some()).count(), 1);
    assert_eq!(r.chain.unwrap().certs[0].der, s.leaf);
}

#[test]
fn meta_refresh_is_followed() {
    let page = r#"<html><head><meta http-equiv="refresh" content="0; url=https://b.test/landing"></head></html>"#;
    let s = site(&[
        (Scheme::Http, "/", Reply::ok(page)),
        (Scheme::Https, "/landing", Reply::chunked("welcome", 3)),
    ]);
    let r = collect_https_chain("a.test", &cfg(&s));
    assert!(r.error.is_none(), "{:?}", r.error);
    assert_eq!(r.hops.len(), 2);
    assert_eq!(r.hops[1].via, RedirectKind::MetaRefresh);
    assert_eq!(r.hops[1].url, "https://b.test/landing");
    assert_eq!(r.hops[1].status, Some(200));
    assert_eq!(r.chain.unwrap().domain, "b.test");
}

#[test]
fn redirect_loop_stops_at_depth_limit() {
    let s = site(&[
        (Scheme::Http, "/", Reply::redirect(302, "https://a.test/")),
        (Scheme::Https, "/", Reply::redirect(302, "/")),
    ]);
    let r = collect_https_chain("a.test", &cfg(&s));
    assert_eq!(r.error, Some(HttpsError::RedirectLoop(10)));
    assert_eq!(r.hops.len(), 11);
    assert!(r.chain.is_some());
}

#[test]
fn http_only_site_falls_back_to_https() {
    let s = site(&[(Scheme::Http, "/", Reply::ok("plain")), (Scheme::Https, "/", Reply::not_found())]);
    let r = collect_https_chain("a.test", &cfg(&s));
    assert_eq!(r.hops.len(), 2);
    assert_eq!(r.hops[1].via, RedirectKind::Fallback);
    assert_eq!(r.hops[1].status, Some(404));
    assert!(r.reachable());
}

#[test]
fn nothing_listening_is_unreachable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = HttpsConfig {
        http_port: port,
        https_port: port,
        connect_timeout: Duration::from_secs(1),
        ..HttpsConfig::default()
    }
    .with_host("a.test", LOCAL);
    let r = collect_https_chain("a.test", &c);
    assert_eq!(r.error, Some(HttpsError::NoHttps));
    assert!(r.hops.iter().all(|h| h.error.is_some()));
}
