#!/usr/bin/env python3
"""Freeze X.509 field sizes computed from `openssl asn1parse` output.

Writes crates/core/tests/fixtures/der_oracle.json: one entry per certificate
(file, index within file) with der_len, the nine field buckets, the residual
structural overhead, and the byte size of the subjectAltName extension.
"""
import base64
import json
import pathlib
import re
import subprocess

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIX = ROOT / "crates/core/tests/fixtures"
LINE = re.compile(r"^\s*(\d+):d=(\d+)\s+hl=(\d+)\s+l=\s*(\d+)\s+(prim|cons):\s*(.*)$")


def pem_blocks(text):
    for m in re.finditer(r"-----BEGIN CERTIFICATE-----(.*?)-----END CERTIFICATE-----", text, re.S):
        yield base64.b64decode("".join(m.group(1).split()))


def asn1parse(der):
    out = subprocess.run(["openssl", "asn1parse", "-inform", "DER"], input=der,
                         capture_output=True, check=True).stdout.decode()
    rows = []
    for line in out.splitlines():
        m = LINE.match(line)
        if m:
            off, depth, hl, length, _, rest = m.groups()
            rows.append(dict(off=int(off), d=int(depth), hl=int(hl), l=int(length), what=rest.strip()))
    return rows


def anatomy(der):
    rows = asn1parse(der)
    size = lambda r: r["hl"] + r["l"]
    top = [r for r in rows if r["d"] == 1]
    tbs, outer_alg, sig = top[0], top[1], top[2]
    tbs_end = tbs["off"] + size(tbs)
    kids = [r for r in rows if r["d"] == 2 and r["off"] < tbs_end]
    fields = dict.fromkeys(["version", "serial", "signature_algo", "issuer", "validity",
                            "subject", "public_key", "extensions", "signature"], 0)
    i = 0
    if kids[0]["what"].startswith("cont [ 0 ]"):
        fields["version"] = size(kids[0])
        i = 1
    order = ["serial", "signature_algo", "issuer", "validity", "subject", "public_key"]
    for name, r in zip(order, kids[i:i + 6]):
        fields[name] += size(r)
    for r in kids[i + 6:]:
        if r["what"].startswith("cont [ 3 ]"):
            fields["extensions"] = size(r)
    fields["signature_algo"] += size(outer_alg)
    fields["signature"] = size(sig)
    san = 0
    for j, r in enumerate(rows):
        if r["d"] == 5 and "X509v3 Subject Alternative Name" in r["what"]:
            parent = [p for p in rows[:j] if p["d"] == 4][-1]
            san = size(parent)
    overhead = len(der) - sum(fields.values())
    return dict(der_len=len(der), fields=fields, overhead=overhead, san_bytes=san)


def main():
    entries = []
    for sub in ["certs", "chains", "realworld", "truststore"]:
        for path in sorted((FIX / sub).glob("*.pem")):
            for idx, der in enumerate(pem_blocks(path.read_text())):
                e = anatomy(der)
                e.update(file=f"{sub}/{path.name}", index=idx)
                entries.append(e)
    (FIX / "der_oracle.json").write_text(json.dumps(entries, indent=1) + "\n")
    print(f"{len(entries)} certificates")


if __name__ == "__main__":
    main()
