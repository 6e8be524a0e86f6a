//! Scriptable HTTP + HTTPS server for exercising the chain collector
//! without network access.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::{ServerConfig, ServerConnection, StreamOwned};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Http,
    Https,
}

#[derive(Debug, Clone)]
pub struct Reply(Vec<u8>);

impl Reply {
    pub fn ok(body: &str) -> Self {
        Reply(format!("HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).into_bytes())
    }

    pub fn redirect(status: u16, location: &str) -> Self {
        Reply(format!("HTTP/1.1 {status} Redirect\r\nLocation: {location}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").into_bytes())
    }

    pub fn chunked(body: &str, chunk: usize) -> Self {
        let mut out = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\nConnection: close\r\n\r\n".to_vec();
        for part in body.as_bytes().chunks(chunk.max(1)) {
            out.extend_from_slice(format!("{:x}\r\n", part.len()).as_bytes());
            out.extend_from_slice(part);
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(b"0\r\n\r\n");
        Reply(out)
    }

    pub fn not_found() -> Self {
        Reply(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_vec())
    }
}

/// Replies keyed by scheme and request path; unknown paths get 404.
pub type Routes = HashMap<(Scheme, String), Reply>;

pub struct HttpFixture {
    http: SocketAddr,
    https: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl HttpFixture {
    /// Binds both listeners on `ip` with ephemeral ports. `chain` is DER,
    /// leaf first; `key` is PKCS#8 DER for the leaf.
    pub fn start(ip: IpAddr, routes: Routes, chain: Vec<Vec<u8>>, key: Vec<u8>) -> std::io::Result<Self> {
        let certs: Vec<CertificateDer<'static>> = chain.into_iter().map(CertificateDer::from).collect();
        let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key));
        let tls = ServerConfig::builder_with_provider(crate::tls::provider())
            .with_safe_default_protocol_versions()
            .and_then(|b| b.with_no_client_auth().with_single_cert(certs, key))
            .map_err(std::io::Error::other)?;
        let tls = Arc::new(tls);
        let routes = Arc::new(routes);
        let stop = Arc::new(AtomicBool::new(false));
        let http_l = TcpListener::bind((ip, 0))?;
        let https_l = TcpListener::bind((ip, 0))?;
        let (http, https) = (http_l.local_addr()?, https_l.local_addr()?);
        let mut threads = Vec::new();
        for (listener, scheme) in [(http_l, Scheme::Http), (https_l, Scheme::Https)] {
            listener.set_nonblocking(true)?;
            let (routes, tls, stop) = (routes.clone(), tls.clone(), stop.clone());
            threads.push(std::thread::spawn(move || accept_loop(listener, scheme, routes, tls, stop)));
        }
        Ok(HttpFixture { http, https, stop, threads })
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http
    }

    pub fn https_addr(&self) -> SocketAddr {
        self.https
    }
}

impl Drop for HttpFixture {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, scheme: Scheme, routes: Arc<Routes>, tls: Arc<ServerConfig>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((sock, _)) => {
                let (routes, tls) = (routes.clone(), tls.clone());
                std::thread::spawn(move || {
                    let _ = serve(sock, scheme, &routes, tls);
                });
            }
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn serve(sock: TcpStream, scheme: Scheme, routes: &Routes, tls: Arc<ServerConfig>) -> std::io::Result<()> {
    sock.set_nonblocking(false)?;
    sock.set_read_timeout(Some(Duration::from_secs(5)))?;
    match scheme {
        Scheme::Http => answer(sock, scheme, routes),
        Scheme::Https => {
            let conn = ServerConnection::new(tls).map_err(std::io::Error::other)?;
            let mut stream = StreamOwned::new(conn, sock);
            answer(&mut stream, scheme, routes)?;
            stream.conn.send_close_notify();
            stream.flush()
        }
    }
}

fn answer(mut s: impl Read + Write, scheme: Scheme, routes: &Routes) -> std::io::Result<()> {
    let mut req = Vec::new();
    let mut buf = [0u8; 4096];
    while !req.windows(4).any(|w| w == b"\r\n\r\n") {
        let n = s.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        req.extend_from_slice(&buf[..n]);
    }
    let line = String::from_utf8_lossy(&req);
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let reply = routes.get(&(scheme, path)).cloned().unwrap_or_else(Reply::not_found);
    s.write_all(&reply.0)?;
    s.flush()
}
