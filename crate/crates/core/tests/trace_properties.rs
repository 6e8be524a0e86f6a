use proptest::prelude::*;
use quicaudit_core::trace::*;

#[derive(Debug, Clone)]
struct RawDatagram {
    server: bool,
    packets: Vec<(PacketKind, u32, Vec<FrameSummary>)>,
    trailing: u32,
}

fn frames(len: u32) -> impl Strategy<Value = (u32, Vec<FrameSummary>)> {
    // Split a packet into header, CRYPTO, ACK and PADDING parts.
    (1u32..=60, 0u32..=100, 0u32..=100, 0u32..=100).prop_map(move |(hdr, c, a, p)| {
        let body = len.saturating_sub(hdr.min(len - 1));
        let total = (c + a + p).max(1);
        let crypto = body * c / total;
        let ack = body * a / total;
        let pad = body * p / total;
        let mut fs = Vec::new();
        if crypto > 0 {
            fs.push(FrameSummary::crypto(crypto, crypto.saturating_sub(7)));
        }
        if ack > 0 {
            fs.push(FrameSummary::ack(ack));
        }
        if pad > 0 {
            fs.push(FrameSummary::padding(pad));
        }
        (len, fs)
    })
}

fn packet(allow_retry: bool) -> impl Strategy<Value = (PacketKind, u32, Vec<FrameSummary>)> {
    let kind = if allow_retry {
        prop_oneof![
            4 => Just(PacketKind::Initial),
            4 => Just(PacketKind::Handshake),
            1 => Just(PacketKind::OneRtt),
            1 => Just(PacketKind::Retry)
        ]
        .boxed()
    } else {
        prop_oneof![Just(PacketKind::Initial), Just(PacketKind::Handshake), Just(PacketKind::OneRtt)].boxed()
    };
    (kind, 20u32..1400).prop_flat_map(|(k, len)| {
        frames(len).prop_map(move |(len, fs)| (k, len, if k == PacketKind::Retry { vec![] } else { fs }))
    })
}

fn raw_datagram(allow_retry: bool) -> impl Strategy<Value = RawDatagram> {
    (any::<bool>(), prop::collection::vec(packet(allow_retry), 1..4), prop_oneof![3 => Just(0u32), 1 => 1u32..1300])
        .prop_map(|(server, packets, trailing)| RawDatagram { server, packets, trailing })
}

fn build(first: u32, raw: &[RawDatagram], confirm_at: Option<usize>, outcome: TraceOutcome) -> HandshakeTrace {
    let mut b = HandshakeTrace::builder(outcome);
    let init = PacketRecord::new(PacketKind::Initial, first).with_frames(vec![FrameSummary::crypto(300, 290), FrameSummary::padding(first - 340)]);
    b.push(Datagram::from_packets(Direction::ClientToServer, 0, vec![init], 0));
    for (i, d) in raw.iter().enumerate() {
        let dir = if d.server { Direction::ServerToClient } else { Direction::ClientToServer };
        let packets = d.packets.iter().map(|(k, len, fs)| PacketRecord::new(*k, *len).with_frames(fs.clone())).collect();
        b.push(Datagram::from_packets(dir, 10 * (i as u64 + 1), packets, d.trailing));
    }
    b.confirmed_at(confirm_at.map(|i| 10 * ((i % (raw.len() + 1)) as u64 + 1))).build().unwrap()
}

fn trace_strategy(max: usize, allow_retry: bool) -> impl Strategy<Value = HandshakeTrace> {
    (1200u32..1473, prop::collection::vec(raw_datagram(allow_retry), 0..max), prop::option::of(0usize..16))
        .prop_map(|(first, raw, c)| build(first, &raw, c, TraceOutcome::Completed))
}

/// Reference classifier written independently from the library: walks the
/// datagram list once with explicit state.
fn reference(trace: &HandshakeTrace) -> ClassificationResult {
    let mut seen_server = false;
    let mut validated = false;
    let (mut s, mut c) = (0u64, 0u64);
    let mut retry = false;
    let mut hs_packets = 0;
    for d in trace.datagrams() {
        if d.direction == Direction::ServerToClient {
            seen_server = true;
            retry |= d.packets.iter().any(|p| p.kind == PacketKind::Retry);
            if !validated {
                s += d.udp_payload_len as u64;
                hs_packets += d.packets.iter().filter(|p| p.kind == PacketKind::Handshake).count();
            }
        } else {
            if seen_server {
                validated = true;
            }
            if !validated {
                c += d.udp_payload_len as u64;
            }
        }
    }
    let _ = hs_packets;
    let cutoff = trace.handshake_confirmed_us().unwrap_or(u64::MAX);
    let dirs: Vec<bool> = trace.datagrams().iter().map(|d| d.direction == Direction::ServerToClient).collect();
    let mut flights = 0u32;
    for (i, d) in trace.datagrams().iter().enumerate() {
        let starts_run = d.direction == Direction::ClientToServer && (i == 0 || dirs[i - 1]);
        if starts_run && d.time_us < cutoff {
            flights += 1;
        }
    }
    let exceeded = s > 3 * c;
    let klass = if retry {
        HandshakeClass::Retry
    } else if exceeded {
        HandshakeClass::Amplification
    } else if flights >= 2 {
        HandshakeClass::MultiRtt
    } else {
        HandshakeClass::OneRtt
    };
    ClassificationResult {
        klass,
        amplification_factor: s as f64 / c as f64,
        pre_validation_server_bytes: s,
        pre_validation_client_bytes: c,
        client_flights: flights,
        limit_exceeded: exceeded,
        multi_rtt_flag: flights >= 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decomposition_partitions_pre_validation_bytes(t in trace_strategy(10, true)) {
        let b = payload_decomposition(&t).unwrap();
        let (server, _) = pre_validation_bytes(&t);
        prop_assert_eq!(b.total(), server);
    }

    #[test]
    fn appending_before_validation_never_lowers_factor(t in trace_strategy(8, true), extra in 1u32..5000) {
        let before = amplification_factor(&t).unwrap();
        let vp = validation_point(&t);
        let mut ds = t.datagrams().to_vec();
        let time = ds[vp - 1].time_us;
        let extra = Datagram::from_packets(Direction::ServerToClient, time, vec![PacketRecord::new(PacketKind::Handshake, extra)], 0);
        ds.insert(vp, extra);
        let t2 = HandshakeTrace::builder(TraceOutcome::Completed).datagrams(ds).build().unwrap();
        prop_assert!(amplification_factor(&t2).unwrap() >= before);
        prop_assert_eq!(validation_point(&t2), vp + 1);
    }

    #[test]
    fn retry_always_wins(t in trace_strategy(6, true)) {
        let r = classify_handshake(&t, LimitPolicy::Data3xRfc9000).unwrap();
        prop_assert_eq!(r.klass == HandshakeClass::Retry, t.has_server_packet(PacketKind::Retry));
        if r.klass == HandshakeClass::Amplification { prop_assert!(r.limit_exceeded); }
        if r.klass == HandshakeClass::OneRtt { prop_assert!(!r.limit_exceeded && r.client_flights <= 1); }
        prop_assert_eq!(r.limit_exceeded, r.pre_validation_server_bytes > 3 * r.pre_validation_client_bytes);
    }

    #[test]
    fn matches_reference_on_small_traces(t in trace_strategy(6, true)) {
        prop_assert!(t.datagrams().len() <= 6);
        prop_assert_eq!(classify_handshake(&t, LimitPolicy::Data3xRfc9000).unwrap(), reference(&t));
    }

    #[test]
    fn equality_is_compliant(client in 1200u32..1473, parts in 1usize..6, delta in -1i64..=1) {
        let total = 3 * client as i64 + delta;
        let mut ds = vec![Datagram::from_packets(Direction::ClientToServer, 0, vec![PacketRecord::new(PacketKind::Initial, client)], 0)];
        let mut left = total;
        for i in 0..parts {
            let len = if i + 1 == parts { left } else { total / parts as i64 };
            left -= len;
            ds.push(Datagram::from_packets(Direction::ServerToClient, 1 + i as u64, vec![PacketRecord::new(PacketKind::Handshake, len as u32)], 0));
        }
        let t = HandshakeTrace::builder(TraceOutcome::TimedOut).datagrams(ds).build().unwrap();
        let r = classify_handshake(&t, LimitPolicy::Data3xRfc9000).unwrap();
        prop_assert_eq!(r.limit_exceeded, delta > 0);
        prop_assert_eq!(limit_check(&t, LimitPolicy::Bytes3x).compliant, delta <= 0);
    }
}

/// Every direction pattern up to six datagrams against a linear scan.
#[test]
fn validation_point_exhaustive() {
    for n in 0..=5usize {
        for mask in 0u32..(1 << n) {
            let raw: Vec<RawDatagram> = (0..n)
                .map(|i| RawDatagram { server: mask & (1 << i) != 0, packets: vec![(PacketKind::Handshake, 100, vec![])], trailing: 0 })
                .collect();
            let t = build(1200, &raw, None, TraceOutcome::Completed);
            let dirs: Vec<bool> = std::iter::once(false).chain(raw.iter().map(|r| r.server)).collect();
            let mut expected = dirs.len();
            let mut seen = false;
            for (i, s) in dirs.iter().enumerate() {
                if *s {
                    seen = true;
                } else if seen {
                    expected = i;
                    break;
                }
            }
            assert_eq!(validation_point(&t), expected, "pattern {mask:0n$b}");
        }
    }
}
