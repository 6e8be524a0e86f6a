use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::UdpSocket;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::server::{ConnectionStats, MockEndpoint};
use crate::spec::{BehaviorSpec, SpecError};

/// A running UDP endpoint. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    endpoint: Arc<Mutex<MockEndpoint<SocketAddr>>>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> Vec<ConnectionStats> {
        self.endpoint.lock().expect("endpoint lock").stats()
    }

    pub fn dropped(&self) -> u64 {
        self.endpoint.lock().expect("endpoint lock").dropped()
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.task.take() {
            Some(task) => task.await.unwrap_or(Ok(())),
            None => Ok(()),
        }
    }

    /// Resolves when the server task exits on its own (socket error).
    pub async fn wait(mut self) -> std::io::Result<()> {
        match self.task.take() {
            Some(task) => task.await.unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

/// Binds `addr` and answers client Initials according to `spec`.
pub async fn serve(spec: BehaviorSpec, addr: SocketAddr) -> Result<ServerHandle, SpecError> {
    spec.validate()?;
    let socket = UdpSocket::bind(addr).await?;
    let addr = socket.local_addr()?;
    let endpoint = Arc::new(Mutex::new(MockEndpoint::new(spec)));
    let (stop, stop_rx) = oneshot::channel();
    let task = tokio::spawn(run(socket, endpoint.clone(), stop_rx));
    Ok(ServerHandle { addr, endpoint, stop: Some(stop), task: Some(task) })
}

async fn run(
    socket: UdpSocket,
    endpoint: Arc<Mutex<MockEndpoint<SocketAddr>>>,
    mut stop: oneshot::Receiver<()>,
) -> std::io::Result<()> {
    let start = Instant::now();
    let now_us = || start.elapsed().as_micros() as u64;
    let mut buf = vec![0u8; 65_536];
    loop {
        loop {
            let next = endpoint.lock().expect("endpoint lock").poll_transmit();
            let Some((peer, bytes)) = next else { break };
            socket.send_to(&bytes, peer).await?;
        }
        let timeout = {
            let mut ep = endpoint.lock().expect("endpoint lock");
            ep.prune();
            ep.poll_timeout()
        };
        let deadline = timeout.map(|t| start + Duration::from_micros(t));
        tokio::select! {
            r = socket.recv_from(&mut buf) => {
                let (n, peer) = r?;
                endpoint.lock().expect("endpoint lock").handle(now_us(), peer, &buf[..n]);
            }
            _ = tokio::time::sleep_until(deadline.unwrap_or_else(Instant::now)), if deadline.is_some() => {
                endpoint.lock().expect("endpoint lock").handle_timeout(now_us());
            }
            _ = &mut stop => return Ok(()),
        }
    }
}
