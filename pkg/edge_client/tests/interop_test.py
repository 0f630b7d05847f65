#!/usr/bin/env python3
"""Cross-implementation interop check.

For every golden vector: the edge client's decode/validate verdict must equal
the reference implementation's verdict (recomputed live, not just read from
the manifest), decoded header fields must match the manifest, and CoAP
extraction must yield the inner frame byte-identically.

Usage: interop_test.py --vectors <dir> --edge <tip-edge binary>
The vectors directory comes from `tip vectors --out <dir>`.
"""

from __future__ import annotations

import argparse
import pathlib
import subprocess
import sys

HEADER_FIELDS = (
    "magic", "version", "packet_type", "transaction_id", "payload_length",
    "capability_hash", "sequence_number", "flags", "timestamp", "ttl",
    "checksum", "signature",
)


def parse_manifest(text: str) -> tuple[int, list[dict]]:
    vectors = []
    current = None
    validation_now = 0
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[vector "):
            current = {"name": line[len("[vector "):-1]}
            vectors.append(current)
            continue
        key, _, value = line.partition("=")
        if current is None:
            if key == "validation_now":
                validation_now = int(value)
            continue
        current[key] = value
    return validation_now, vectors


def run_edge(edge: str, *args: str) -> subprocess.CompletedProcess:
    return subprocess.run([edge, *args], capture_output=True, text=True, timeout=60)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--vectors", required=True)
    parser.add_argument("--edge", required=True)
    args = parser.parse_args()

    vectors_dir = pathlib.Path(args.vectors)
    manifest_path = vectors_dir / "manifest.txt"
    if not manifest_path.exists():
        print(f"no manifest at {manifest_path}; run `tip vectors --out {vectors_dir}`",
              file=sys.stderr)
        return 2
    validation_now, vectors = parse_manifest(manifest_path.read_text())

    # The reference implementation recomputes its verdicts live so the edge
    # client is compared against the engine, not against frozen numbers.
    from tip.cli import validation_verdict

    failures = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        verdict = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"INTEROP {name}: {verdict}{suffix}")
        if not ok:
            failures += 1

    for vector in vectors:
        name = vector["name"]
        frame = (vectors_dir / vector["file"]).read_bytes()
        pubkey_hex = vector["signer_pubkey"]

        reference = validation_verdict(frame, bytes.fromhex(pubkey_hex), validation_now)
        edge_proc = run_edge(args.edge, "verify", str(vectors_dir / vector["file"]),
                             pubkey_hex)
        edge_verdict = edge_proc.returncode
        check(
            f"{name} verdict",
            edge_verdict == reference == int(vector["expected"]),
            f"edge={edge_verdict} reference={reference} manifest={vector['expected']}",
        )

        if len(frame) >= 116:
            decode = run_edge(args.edge, "decode", str(vectors_dir / vector["file"]))
            if decode.returncode == 0:
                decoded = dict(
                    line.split("=", 1) for line in decode.stdout.splitlines() if "=" in line
                )
                mismatched = [
                    field for field in HEADER_FIELDS
                    if decoded.get(field) != vector.get(field)
                ]
                check(f"{name} header fields", not mismatched, ",".join(mismatched) or "12 fields")
            else:
                # decode refuses exactly the structurally broken headers
                check(f"{name} header fields",
                      int(vector["expected"]) in (1, 2, 3),
                      f"decode exit {decode.returncode}")

        coap_name = vector.get("coap_file")
        if coap_name:
            extract = run_edge(args.edge, "extract", str(vectors_dir / coap_name))
            inner_hex = ""
            for line in extract.stdout.splitlines():
                if line.startswith("frame="):
                    inner_hex = line[len("frame="):]
            check(
                f"{name} coap extraction",
                extract.returncode == 0 and inner_hex == frame.hex(),
                f"{len(inner_hex) // 2} bytes",
            )

    total = len(vectors)
    print(f"interop: {total} vectors, {failures} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
