//! Line-delimited JSON trace format.
//!
//! Each trace starts with a `{"kind":"trace",...}` header line followed by
//! one `{"kind":"datagram",...}` line per datagram. Datagram lines without a
//! preceding header form a single trace with default metadata.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Datagram, HandshakeTrace, TraceError, TraceOutcome};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace ending at line {line}: {source}")]
    Trace { line: usize, source: TraceError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(default)]
    client_initial_size: Option<u32>,
    outcome: TraceOutcome,
    #[serde(default)]
    handshake_confirmed_us: Option<u64>,
    #[serde(default = "yes")]
    frames_visible: bool,
    #[serde(default)]
    stateless_reset: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Trace(Header),
    Datagram(Datagram),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LineRef<'a> {
    Trace(&'a Header),
    Datagram(&'a Datagram),
}

pub fn write_trace<W: Write>(mut w: W, trace: &HandshakeTrace) -> std::io::Result<()> {
    let header = Header {
        target: trace.target().map(str::to_owned),
        client_initial_size: Some(trace.client_initial_size()),
        outcome: trace.outcome(),
        handshake_confirmed_us: trace.handshake_confirmed_us(),
        frames_visible: trace.frames_visible(),
        stateless_reset: trace.stateless_reset(),
    };
    serde_json::to_writer(&mut w, &LineRef::Trace(&header))?;
    w.write_all(b"\n")?;
    for d in trace.datagrams() {
        serde_json::to_writer(&mut w, &LineRef::Datagram(d))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_string(trace: &HandshakeTrace) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn finish(header: Header, datagrams: Vec<Datagram>, line: usize) -> Result<HandshakeTrace, JsonlError> {
    let mut b = HandshakeTrace::builder(header.outcome)
        .confirmed_at(header.handshake_confirmed_us)
        .frames_visible(header.frames_visible)
        .stateless_reset(header.stateless_reset)
        .datagrams(datagrams);
    if let Some(t) = header.target {
        b = b.target(t);
    }
    if let Some(size) = header.client_initial_size {
        b = b.client_initial_size(size);
    }
    b.build().map_err(|source| JsonlError::Trace { line, source })
}

pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<HandshakeTrace>, JsonlError> {
    let mut out = Vec::new();
    let mut current: Option<(Header, Vec<Datagram>)> = None;
    let mut last = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        last = i + 1;
        match serde_json::from_str(&line).map_err(|source| JsonlError::Json { line: i + 1, source })? {
            Line::Trace(h) => {
                if let Some((h, ds)) = current.replace((h, Vec::new())) {
                    out.push(finish(h, ds, i)?);
                }
            }
            Line::Datagram(d) => {
                current
                    .get_or_insert_with(|| {
                        let h = Header {
                            target: None,
                            client_initial_size: None,
                            outcome: TraceOutcome::Completed,
                            handshake_confirmed_us: None,
                            frames_visible: true,
                            stateless_reset: false,
                        };
                        (h, Vec::new())
                    })
                    .1
                    .push(d);
            }
        }
    }
    if let Some((h, ds)) = current {
        out.push(finish(h, ds, last)?);
    }
    Ok(out)
}
