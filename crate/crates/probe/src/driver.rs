//! I/O loops around a [`ClientSession`]: a UDP socket with wall-clock time,
//! or an in-memory link to a mock endpoint with simulated time.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::ErrorKind;
use std::time::Duration;

use quicaudit_mock::MockEndpoint;
use tokio::net::UdpSocket;
use tokio::time::Instant;

use crate::session::ClientSession;

/// Runs `session` over a connected UDP socket until it is done or `deadline`
/// elapses. An ICMP error ends the probe early.
pub async fn drive_udp(session: &mut dyn ClientSession, socket: &UdpSocket, deadline: Duration) -> std::io::Result<()> {
    let start = Instant::now();
    let end = start + deadline;
    let now_us = || start.elapsed().as_micros() as u64;
    let mut buf = vec![0u8; 65_536];
    loop {
        while let Some(d) = session.poll_transmit(now_us()) {
            match socket.send(&d).await {
                Ok(_) => {}
                Err(e) if is_unreachable(&e) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
        if session.is_done() {
            return Ok(());
        }
        let wake = session.poll_timeout().map(|t| start + Duration::from_micros(t)).map_or(end, |t| t.min(end));
        tokio::select! {
            r = socket.recv(&mut buf) => match r {
                Ok(n) => session.handle_datagram(now_us(), &buf[..n]),
                Err(e) if is_unreachable(&e) => return Ok(()),
                Err(e) => return Err(e),
            },
            _ = tokio::time::sleep_until(wake) => {
                if Instant::now() >= end {
                    return Ok(());
                }
                session.handle_timeout(now_us());
            }
        }
    }
}

fn is_unreachable(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::ConnectionRefused | ErrorKind::HostUnreachable | ErrorKind::NetworkUnreachable)
}

/// Simulated path between one client and a mock endpoint.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub one_way_us: u64,
}

impl Default for Link {
    fn default() -> Self {
        Link { one_way_us: 10_000 }
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct InFlight {
    at: u64,
    seq: u64,
    to_server: bool,
    bytes: Vec<u8>,
}

/// Discrete-event loop: deterministic, and as fast as the CPU allows
/// regardless of simulated timers. Returns the simulated end time.
pub fn drive_loopback(session: &mut dyn ClientSession, server: &mut MockEndpoint<u8>, link: Link, deadline_us: u64) -> u64 {
    const PEER: u8 = 0;
    let mut heap: BinaryHeap<Reverse<InFlight>> = BinaryHeap::new();
    let mut seq = 0;
    let mut now = 0;
    loop {
        while let Some(bytes) = session.poll_transmit(now) {
            seq += 1;
            heap.push(Reverse(InFlight { at: now + link.one_way_us, seq, to_server: true, bytes }));
        }
        while let Some((_, bytes)) = server.poll_transmit() {
            seq += 1;
            heap.push(Reverse(InFlight { at: now + link.one_way_us, seq, to_server: false, bytes }));
        }
        if session.is_done() {
            return now;
        }
        let next = [heap.peek().map(|Reverse(f)| f.at), session.poll_timeout(), server.poll_timeout()]
            .into_iter()
            .flatten()
            .min();
        match next {
            Some(t) if t <= deadline_us => now = now.max(t),
            _ => return deadline_us,
        }
        if heap.peek().is_some_and(|Reverse(f)| f.at <= now) {
            let Reverse(f) = heap.pop().expect("peeked");
            if f.to_server {
                server.handle(now, PEER, &f.bytes);
            } else {
                session.handle_datagram(now, &f.bytes);
            }
            continue;
        }
        if server.poll_timeout().is_some_and(|t| t <= now) {
            server.handle_timeout(now);
        }
        if session.poll_timeout().is_some_and(|t| t <= now) {
            session.handle_timeout(now);
        }
    }
}
