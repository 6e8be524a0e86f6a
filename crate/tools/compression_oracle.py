#!/usr/bin/env python3
"""Freeze RFC 8879 compressed sizes computed by the reference C libraries.

Input for each chain is the TLS 1.3 Certificate message body: empty request
context, 24-bit list length, then per certificate a 24-bit length, the DER
bytes and an empty 16-bit extensions block. Levels: zlib 9, brotli quality 11
with a 22-bit window, zstd 22. Requires the `brotli` and `zstandard` modules.
"""
import base64
import json
import pathlib
import re
import zlib

import brotli
import zstandard

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIX = ROOT / "crates/core/tests/fixtures"


def certificate_message(ders):
    entries = b"".join(len(d).to_bytes(3, "big") + d + b"\x00\x00" for d in ders)
    return b"\x00" + len(entries).to_bytes(3, "big") + entries


def main():
    out = []
    for path in sorted((FIX / "chains").glob("*.pem")) + sorted((FIX / "certs").glob("*.pem")):
        ders = [base64.b64decode("".join(m.split()))
                for m in re.findall(r"-----BEGIN CERTIFICATE-----(.*?)-----END CERTIFICATE-----",
                                    path.read_text(), re.S)]
        msg = certificate_message(ders)
        out.append(dict(
            file=f"{path.parent.name}/{path.name}",
            original_len=len(msg),
            zlib=len(zlib.compress(msg, 9)),
            brotli=len(brotli.compress(msg, quality=11, lgwin=22)),
            zstd=len(zstandard.ZstdCompressor(level=22).compress(msg)),
        ))
    (FIX / "compression_oracle.json").write_text(json.dumps(out, indent=1) + "\n")
    print(f"{len(out)} chains")


if __name__ == "__main__":
    main()
