//! Certificate collection over HTTPS, following HTTP and HTML redirects.
//!
//! Blocking I/O; callers on an async runtime should use `spawn_blocking`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use quicaudit_core::cert::{parse_chain, ChainRecord, ChainSource};
use regex::Regex;
use rustls::{ClientConfig, ClientConnection, StreamOwned};
use thiserror::Error;
use url::Url;

pub const MAX_REDIRECTS: usize = 10;
const MAX_RESPONSE: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpsError {
    #[error("redirect limit of {0} exceeded")]
    RedirectLoop(usize),
    #[error("no HTTPS endpoint answered")]
    NoHttps,
    #[error("invalid url {0}")]
    Url(String),
}

#[derive(Debug, Clone)]
pub struct HttpsConfig {
    /// Port used for `http://` URLs without an explicit port.
    pub http_port: u16,
    /// Port used for `https://` URLs without an explicit port.
    pub https_port: u16,
    /// Host name to address overrides; other names use the system resolver.
    pub hosts: HashMap<String, IpAddr>,
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
    pub max_redirects: usize,
}

impl Default for HttpsConfig {
    fn default() -> Self {
        HttpsConfig {
            http_port: 80,
            https_port: 443,
            hosts: HashMap::new(),
            connect_timeout: Duration::from_secs(10),
            io_timeout: Duration::from_secs(10),
            max_redirects: MAX_REDIRECTS,
        }
    }
}

impl HttpsConfig {
    pub fn with_host(mut self, name: &str, ip: IpAddr) -> Self {
        self.hosts.insert(name.to_ascii_lowercase(), ip);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedirectKind {
    Start,
    Status,
    MetaRefresh,
    /// HTTPS attempted because the HTTP path never reached it.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct Hop {
    pub url: String,
    pub via: RedirectKind,
    pub status: Option<u16>,
    /// Certificates of an HTTPS hop, in the order the server sent them.
    pub chain: Option<ChainRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HttpsResult {
    pub hops: Vec<Hop>,
    /// Chain of the last HTTPS hop that completed a TLS handshake.
    pub chain: Option<ChainRecord>,
    pub error: Option<HttpsError>,
}

impl HttpsResult {
    pub fn reachable(&self) -> bool {
        self.chain.is_some()
    }
}

struct Response {
    status: u16,
    location: Option<String>,
    body: Vec<u8>,
}

/// Fetches `http://domain/`, follows redirects and records every HTTPS hop.
pub fn collect_https_chain(domain: &str, cfg: &HttpsConfig) -> HttpsResult {
    let tls = match crate::tls::client_config(&["http/1.1"], false) {
        Ok(c) => c,
        Err(e) => {
            return HttpsResult {
                hops: Vec::new(),
                chain: None,
                error: Some(HttpsError::Url(e.to_string())),
            }
        }
    };
    let mut result = HttpsResult { hops: Vec::new(), chain: None, error: None };
    let start = match Url::parse(&format!("http://{domain}/")) {
        Ok(u) => u,
        Err(_) => {
            result.error = Some(HttpsError::Url(domain.to_string()));
            return result;
        }
    };
    let mut next = Some((start, RedirectKind::Start));
    let mut followed = 0;
    while let Some((url, via)) = next.take() {
        let (hop, response) = fetch(&url, via, cfg, &tls);
        let failed_start = hop.error.is_some() && via == RedirectKind::Start;
        if let Some(chain) = &hop.chain {
            result.chain = Some(chain.clone());
        }
        result.hops.push(hop);
        if failed_start {
            next = https_fallback(domain);
            continue;
        }
        let Some(resp) = response else { break };
        let target = match (resp.status, resp.location) {
            (300..=399, Some(loc)) => Some((loc, RedirectKind::Status)),
            (200..=299, _) => meta_refresh(&resp.body).map(|u| (u, RedirectKind::MetaRefresh)),
            _ => None,
        };
        if let Some((target, kind)) = target {
            if followed == cfg.max_redirects {
                result.error = Some(HttpsError::RedirectLoop(cfg.max_redirects));
                break;
            }
            followed += 1;
            match url.join(target.trim()) {
                Ok(u) => next = Some((u, kind)),
                Err(_) => result.error = Some(HttpsError::Url(target)),
            }
        }
    }
    let https_seen = result.hops.iter().any(|h| h.url.starts_with("https:"));
    if !https_seen && result.error.is_none() {
        if let Some((url, via)) = https_fallback(domain) {
            let (hop, _) = fetch(&url, via, cfg, &tls);
            result.chain = hop.chain.clone();
            result.hops.push(hop);
        }
    }
    if result.chain.is_none() && result.error.is_none() {
        result.error = Some(HttpsError::NoHttps);
    }
    result
}

fn https_fallback(domain: &str) -> Option<(Url, RedirectKind)> {
    Url::parse(&format!("https://{domain}/")).ok().map(|u| (u, RedirectKind::Fallback))
}

fn fetch(url: &Url, via: RedirectKind, cfg: &HttpsConfig, tls: &Arc<ClientConfig>) -> (Hop, Option<Response>) {
    let mut hop = Hop { url: url.to_string(), via, status: None, chain: None, error: None };
    let resp = match request(url, cfg, tls, &mut hop) {
        Ok(r) => r,
        Err(e) => {
            hop.error = Some(e);
            return (hop, None);
        }
    };
    hop.status = Some(resp.status);
    (hop, Some(resp))
}

fn connect(url: &Url, cfg: &HttpsConfig) -> Result<TcpStream, String> {
    let host = url.host_str().ok_or("url without host")?;
    let https = url.scheme() == "https";
    let port = url.port().unwrap_or(if https { cfg.https_port } else { cfg.http_port });
    let bare = host.trim_start_matches('[').trim_end_matches(']');
    let addrs: Vec<SocketAddr> = match cfg.hosts.get(&bare.to_ascii_lowercase()) {
        Some(ip) => vec![SocketAddr::new(*ip, port)],
        None => (bare, port).to_socket_addrs().map_err(|e| format!("resolve {host}: {e}"))?.collect(),
    };
    let mut last = format!("no address for {host}");
    for addr in addrs.into_iter().filter(SocketAddr::is_ipv4) {
        match TcpStream::connect_timeout(&addr, cfg.connect_timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(cfg.io_timeout)).map_err(|e| e.to_string())?;
                s.set_write_timeout(Some(cfg.io_timeout)).map_err(|e| e.to_string())?;
                return Ok(s);
            }
            Err(e) => last = format!("connect {addr}: {e}"),
        }
    }
    Err(last)
}

fn request(url: &Url, cfg: &HttpsConfig, tls: &Arc<ClientConfig>, hop: &mut Hop) -> Result<Response, String> {
    let tcp = connect(url, cfg)?;
    let host = url.host_str().unwrap_or_default();
    let path = match url.query() {
        Some(q) => format!("{}?{q}", url.path()),
        None => url.path().to_string(),
    };
    let authority = match url.port() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    };
    let req = format!(
        "GET {path} HTTP/1.1\r\nHost: {authority}\r\nUser-Agent: quicaudit\r\nAccept: text/html\r\nConnection: close\r\n\r\n"
    );
    let raw = if url.scheme() == "https" {
        let name = crate::tls::server_name(host).map_err(|e| e.to_string())?;
        let conn = ClientConnection::new(tls.clone(), name).map_err(|e| e.to_string())?;
        let mut stream = StreamOwned::new(conn, tcp);
        while stream.conn.is_handshaking() {
            stream.conn.complete_io(&mut stream.sock).map_err(|e| format!("tls: {e}"))?;
        }
        if let Some(certs) = stream.conn.peer_certificates() {
            let blob: Vec<u8> = certs.iter().flat_map(|c| c.as_ref().iter().copied()).collect();
            match parse_chain(&blob, host, ChainSource::Https) {
                Ok(chain) => hop.chain = Some(chain),
                Err(e) => return Err(format!("certificate parse: {e}")),
            }
        }
        stream.write_all(req.as_bytes()).map_err(|e| e.to_string())?;
        read_all(&mut stream)?
    } else {
        let mut tcp = tcp;
        tcp.write_all(req.as_bytes()).map_err(|e| e.to_string())?;
        read_all(&mut tcp)?
    };
    parse_response(&raw)
}

/// Reads until EOF or the size cap. A missing TLS close_notify after data
/// is tolerated.
fn read_all(r: &mut impl Read) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut buf = [0u8; 16 * 1024];
    loop {
        match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                out.extend_from_slice(&buf[..n]);
                if out.len() >= MAX_RESPONSE {
                    break;
                }
            }
            Err(e) if !out.is_empty() && e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) if !out.is_empty() && matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => break,
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(out)
}

fn parse_response(raw: &[u8]) -> Result<Response, String> {
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut resp = httparse::Response::new(&mut headers);
    let head_len = match resp.parse(raw).map_err(|e| format!("http: {e}"))? {
        httparse::Status::Complete(n) => n,
        httparse::Status::Partial => return Err("http: truncated response header".into()),
    };
    let status = resp.code.ok_or("http: no status")?;
    let header = |name: &str| {
        resp.headers
            .iter()
            .find(|h| h.name.eq_ignore_ascii_case(name))
            .map(|h| String::from_utf8_lossy(h.value).into_owned())
    };
    let location = header("location");
    let chunked = header("transfer-encoding").is_some_and(|v| v.to_ascii_lowercase().contains("chunked"));
    let mut body = raw[head_len..].to_vec();
    if chunked {
        body = dechunk(&body);
    } else if let Some(len) = header("content-length").and_then(|v| v.trim().parse::<usize>().ok()) {
        body.truncate(len);
    }
    Ok(Response { status, location, body })
}

fn dechunk(mut data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    while let Some(line_end) = data.windows(2).position(|w| w == b"\r\n") {
        let line = String::from_utf8_lossy(&data[..line_end]);
        let size_hex = line.split(';').next().unwrap_or("").trim();
        let Ok(size) = usize::from_str_radix(size_hex, 16) else { break };
        data = &data[line_end + 2..];
        if size == 0 || data.len() < size {
            out.extend_from_slice(&data[..size.min(data.len())]);
            break;
        }
        out.extend_from_slice(&data[..size]);
        data = data.get(size + 2..).unwrap_or_default();
    }
    out
}

/// Target URL of the first `<meta http-equiv="refresh">` tag.
pub fn meta_refresh(body: &[u8]) -> Option<String> {
    static META: OnceLock<Regex> = OnceLock::new();
    static EQUIV: OnceLock<Regex> = OnceLock::new();
    static CONTENT: OnceLock<Regex> = OnceLock::new();
    static TARGET: OnceLock<Regex> = OnceLock::new();
    let meta = META.get_or_init(|| Regex::new(r"(?is)<meta\b[^>]*>").expect("regex"));
    let equiv = EQUIV.get_or_init(|| Regex::new(r#"(?i)http-equiv\s*=\s*["']?\s*refresh"#).expect("regex"));
    let content = CONTENT.get_or_init(|| {
        Regex::new(r#"(?i)content\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).expect("regex")
    });
    let url_part = TARGET.get_or_init(|| {
        Regex::new(r#"(?i)^\s*\d*(?:\.\d*)?\s*[;,]\s*(?:url\s*=\s*)?['"]?([^'"]+)['"]?\s*$"#).expect("regex")
    });
    let html = String::from_utf8_lossy(body);
    for tag in meta.find_iter(&html) {
        let tag = tag.as_str();
        if !equiv.is_match(tag) {
            continue;
        }
        let caps = content.captures(tag)?;
        let value = caps.get(1).or(caps.get(2)).or(caps.get(3))?.as_str();
        if let Some(u) = url_part.captures(value).and_then(|c| c.get(1)) {
            let u = u.as_str().trim();
            if !u.is_empty() {
                return Some(u.to_string());
            }
        }
    }
    None
}
