#!/usr/bin/env python3
"""Writes the backscatter fixture corpus.

Meta-like sessions resend until they reach the listed totals; the largest is
45 x 1362 = 61,290 bytes. Meta session durations are chosen so that their
median is 51 s and their maximum 206 s. Other providers add noise, and one
SCID is reused after a gap longer than the 300 s session timeout.
"""
import json
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/backscatter"
DST = "192.0.2.{}"

META = [  # (total bytes, duration s)
    (61_290, 206),
    (35_056, 51),
    (27_240, 80),
    (13_620, 44),
    (7_000, 30),
    (6_810, 150),
    (4_086, 12),
]
CLOUDFLARE = [(3_600, 3), (2_462 + 1_200, 1), (4_000, 2)]
OTHER = [(2_400, 5)]


def chunks(total, size=1252):
    out = []
    while total > size:
        out.append(size)
        total -= size
    out.append(total)
    return out


def session(src, scid, start_s, total, duration_s):
    sizes = chunks(total)
    n = len(sizes)
    recs = []
    for i, size in enumerate(sizes):
        frac = 0.0 if n == 1 else i / (n - 1)
        t = int(round(start_s * 1e6 + frac * duration_s * 1e6))
        recs.append(dict(src_ip=src, dst_ip=DST.format(7), time_us=t, udp_len=size, scid=scid))
    return recs


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    recs = []
    for i, (total, dur) in enumerate(META):
        recs += session(f"157.240.{i}.35", f"c0ffee{i:02x}", 100 * i, total, dur)
    for i, (total, dur) in enumerate(CLOUDFLARE):
        recs += session(f"104.16.{i}.1", f"cf{i:02x}", 50 * i, total, dur)
    for total, dur in OTHER:
        recs += session("198.51.100.9", "0123", 0, total, dur)
        recs += session("198.51.100.9", "0123", 1000, total, dur)
    recs.sort(key=lambda r: (r["time_us"], r["scid"]))
    with open(OUT / "sessions.jsonl", "w") as f:
        for r in recs:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")
    (OUT / "prefixes.csv").write_text(
        "prefix,provider\n157.240.0.0/16,Meta\n31.13.64.0/18,Meta\n104.16.0.0/13,Cloudflare\n"
    )
    print(len(recs), "records")


if __name__ == "__main__":
    main()
