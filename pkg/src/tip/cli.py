"""Command-line entry points: node, intent, adapter, vectors, scenario, bench.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Set TIP_LOG to a
level name for JSON-lines logs on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import random
import signal
import statistics
import sys
import time

from . import __version__, coap, orchestrator as orch, toml_mini, wire
from .adapter import (
    AdapterError,
    AdapterRegistry,
    FormulaError,
    SandboxConfig,
    execute_scalar,
    parse_adapter_toml,
    validate_module,
)
from .config import ConfigError, load_node_config
from .crypto import (
    NodeIdentity,
    ReplayCache,
    establish_session,
    generate_ephemeral,
    open_sealed,
    seal,
    sign_ephemeral,
)
from .model import Capability, DataSchema, Intent, NodeRecord
from .negotiation import CandidateObservation, ReputationStore, ahp_weights, score
from .node import Node
from .payloads import (
    ContractAccept,
    ContractSigned,
    DataRequest,
    DataResponse,
    DiscoveryAnnounce,
    DiscoveryQuery,
    IntentProposal,
    IntentRequest,
    SignedEphemeral,
    encode_payload,
)
from .scenario import build_factory, run_factory_scenario, run_script
from .fieldbus import FillingMachine

log = logging.getLogger("tip")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

ERROR_CODES = {
    "valid": 0,
    "TooShort": 1,
    "BadMagic": 2,
    "UnsupportedVersion": 3,
    "ChecksumMismatch": 4,
    "BadSignature": 5,
    "ReplayDetected": 6,
    "Expired": 7,
}


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": round(record.created, 6),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        return json.dumps(entry, sort_keys=True)


def _setup_logging() -> None:
    level_name = os.environ.get("TIP_LOG")
    if not level_name:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    logging.basicConfig(level=level_name.upper(), handlers=[handler])


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tip", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tip {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_node = sub.add_parser("node", help="run a long-lived node from a config file")
    p_node.add_argument("--config", required=True)
    p_node.add_argument("--transport", choices=["sim", "udp"], default=None)
    p_node.add_argument("--duration", type=float, default=None,
                        help="seconds to run (default: until interrupted)")

    p_intent = sub.add_parser("intent", help="submit an intent and print the result")
    p_intent.add_argument("--file", required=True, help="intent TOML")
    p_intent.add_argument("--explain", action="store_true")
    p_intent.add_argument("--factory", action="store_true", default=True,
                          help="run against the built-in simulated factory (default)")
    p_intent.add_argument("--seed", type=int, default=0)
    p_intent.add_argument("--requests", type=int, default=1)

    p_adapter = sub.add_parser("adapter", help="compile an adapter descriptor")
    p_adapter.add_argument("--descriptor", required=True)
    p_adapter.add_argument("--emit", metavar="DIR", default=None)
    p_adapter.add_argument("--test", metavar="VALUE", type=float, default=None)

    p_vectors = sub.add_parser("vectors", help="emit golden wire vectors + manifest")
    p_vectors.add_argument("--out", required=True)

    p_scn = sub.add_parser("scenario", help="run a scenario script")
    p_scn.add_argument("--script", required=True,
                       help="TOML script path, or 'factory', 'factory-heal', 'factory-outage'")
    p_scn.add_argument("--seed", type=int, default=0)
    p_scn.add_argument("--out", default=None, help="write the JSON-lines report here")

    p_bench = sub.add_parser("bench", help="timing micro-benchmarks")
    p_bench.add_argument("--kind", choices=["scoring", "translate", "crypto"], required=True)
    p_bench.add_argument("--size", type=int, default=10_000)
    p_bench.add_argument("--json", action="store_true")
    return parser


# --- node -----------------------------------------------------------------------


def cmd_node(args) -> int:
    try:
        setup = load_node_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    transport_kind = args.transport or setup.transport
    if transport_kind != "udp":
        print("standalone nodes require --transport udp (sim nodes live in scenarios)",
              file=sys.stderr)
        return EXIT_RUNTIME

    from .udp import BindFailure, UdpTransport

    try:
        transport = UdpTransport(setup.bind)
    except BindFailure as exc:
        print(f"bind failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    registry = AdapterRegistry()
    if setup.adapter_dir and os.path.isdir(setup.adapter_dir):
        for entry in sorted(os.listdir(setup.adapter_dir)):
            if entry.endswith(".toml"):
                with open(os.path.join(setup.adapter_dir, entry)) as fh:
                    registry.register(parse_adapter_toml(fh.read()))

    setup.node_config.early_cancel = False  # no local-link bus over plain UDP
    reputation = ReputationStore.load(setup.reputation_file) if setup.reputation_file \
        else ReputationStore()
    node = Node(setup.identity, transport, setup.node_config, registry=registry,
                reputation=reputation)
    for cap_setup in setup.capabilities:
        handler = _capability_handler(cap_setup)
        node.serve(cap_setup.capability, handler)
        log.info("serving %s (%s)", cap_setup.capability.id, cap_setup.capability.schema.wire_name)
        print(json.dumps({"event": "serving", "capability": cap_setup.capability.id,
                          "address": transport.address}), flush=True)

    for peer in setup.bootstrap:
        transport.run_soon(lambda p=peer: node.bootstrap(p, lambda ok: _after_bootstrap(node, ok)))

    stop = {"flag": False}

    def on_signal(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    transport.start_thread()
    started = time.monotonic()
    try:
        while not stop["flag"]:
            if args.duration is not None and time.monotonic() - started >= args.duration:
                break
            time.sleep(0.05)
    finally:
        transport.stop()
        node.flush_reputation(setup.reputation_file)
        print(json.dumps({"event": "shutdown", "address": transport.address}), flush=True)
    return EXIT_OK


def _after_bootstrap(node: Node, ok: bool) -> None:
    if not ok:
        log.warning("bootstrap peer unreachable")
        return
    for cap_id in list(node.served):
        try:
            node.dht_publish(cap_id, lambda acks: log.info("published (%d acks)", acks))
        except Exception as exc:
            log.warning("publish failed: %s", exc)


def _capability_handler(cap_setup):
    if cap_setup.kind == "fill":
        return FillingMachine().fill
    if cap_setup.kind == "telemetry":
        return FillingMachine().telemetry
    value = cap_setup.value
    return lambda _params: value


# --- intent ---------------------------------------------------------------------


def load_intent_file(path: str) -> Intent:
    doc = toml_mini.load(path)
    table = doc.get("intent")
    if not isinstance(table, dict):
        raise ConfigError("intent file needs an [intent] table")
    weights = table.get("weights")
    if weights is None and "ahp_matrix" in table:
        result = ahp_weights(table["ahp_matrix"])
        weights = result.weights
    return Intent(
        capability_required=table["capability"],
        desired_schema=DataSchema.from_name(table.get("desired_schema", "f32")),
        params=table.get("params", {}),
        constraints=table.get("constraints", {}),
        weights=weights or {"func": 0.25, "cost": 0.25, "trust": 0.25, "avail": 0.25},
    )


def cmd_intent(args) -> int:
    try:
        intent = load_intent_file(args.file)
    except FileNotFoundError:
        print(f"no such intent file: {args.file}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, toml_mini.TomlError, KeyError, ValueError) as exc:
        print(f"bad intent file: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    runner = build_factory(seed=args.seed)
    session = runner.submit_intent("gateway", intent)
    runner.run_until(lambda: session.state in (orch.SessionState.ACTIVE,
                                               orch.SessionState.FAILED))
    if session.state != orch.SessionState.ACTIVE:
        print(f"no contract: {session.last_error}", file=sys.stderr)
        return EXIT_RUNTIME

    print("candidates (best first):")
    header = f"{'node':18} {'u_func':>7} {'u_cost':>7} {'u_trust':>8} {'u_avail':>8} {'total':>7}  adapter"
    print(header)
    for cand in session.scored:
        print(
            f"{cand.node.node_id.hex()[:16]:18} {cand.u_func:7.3f} {cand.u_cost:7.3f} "
            f"{cand.u_trust:8.3f} {cand.u_avail:8.3f} {cand.total:7.3f}  "
            f"{'yes' if cand.adapter_required else 'no'}"
        )
    if args.explain:
        print(f"weights: {intent.weights}")
        print(f"constraints: {intent.constraints}")
    contract = session.contract
    print(f"contract {contract.contract_id.hex()} with {contract.provider_id.hex()[:16]} "
          f"(adapter: {contract.adapter_id or 'none'})")

    values = []
    errors = []
    for _ in range(args.requests):
        orch.request_data(session, intent.params, values.append, errors.append)
        runner.run_until(lambda: len(values) + len(errors) >= 1)
    for value in values:
        print(f"value: {value}")
    if errors:
        print(f"errors: {[str(e) for e in errors]}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# --- adapter --------------------------------------------------------------------


def cmd_adapter(args) -> int:
    try:
        with open(args.descriptor) as fh:
            spec = parse_adapter_toml(fh.read())
        from .adapter import compile_adapter

        compiled = compile_adapter(spec)
        validate_module(compiled.wasm_bytes)
    except FileNotFoundError:
        print(f"no such descriptor: {args.descriptor}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AdapterError, FormulaError) as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"adapter {spec.id}: {spec.source_schema.wire_name} -> {spec.target_schema.wire_name} "
          f"({len(compiled.wasm_bytes)} bytes, cache key {compiled.cache_key:#018x})")
    if args.emit:
        os.makedirs(args.emit, exist_ok=True)
        wasm_path = os.path.join(args.emit, f"{spec.id}.wasm")
        wat_path = os.path.join(args.emit, f"{spec.id}.wat")
        with open(wasm_path, "wb") as fh:
            fh.write(compiled.wasm_bytes)
        with open(wat_path, "w") as fh:
            fh.write(compiled.text_form)
        print(f"wrote {wasm_path} and {wat_path}")
    if args.test is not None:
        value = args.test
        if spec.source_schema.wire_name in ("u16", "u32", "i32"):
            value = int(value)
        try:
            result = execute_scalar(compiled, value)
        except AdapterError as exc:
            print(f"execution error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"transform({value}) = {result}")
    return EXIT_OK


# --- vectors --------------------------------------------------------------------

VEC_TIMESTAMP_US = 1_755_000_000_000_000
VEC_VALIDATION_NOW_US = VEC_TIMESTAMP_US + 1_000_000


def _vector_identities():
    ident_a = NodeIdentity.from_seed(hashlib.sha256(b"tip-vectors-identity-a").digest())
    ident_b = NodeIdentity.from_seed(hashlib.sha256(b"tip-vectors-identity-b").digest())
    return ident_a, ident_b


def _vector_record(identity: NodeIdentity, address: str) -> NodeRecord:
    return NodeRecord(
        node_id=identity.node_id,
        signing_public=identity.signing_public,
        addresses=[address],
        capabilities=[Capability("machine:fluid:fill", DataSchema.U16, "1.0.0", 0.995, 10.0)],
        last_seen=VEC_TIMESTAMP_US,
    )


def build_vectors() -> tuple[list[dict], dict]:
    """Deterministic packet set: one per packet type, an encrypted variant,
    and structural negatives. Returns (vectors, keyring)."""
    ident_a, ident_b = _vector_identities()
    rng = random.Random("tip-golden-vectors")
    record_a = _vector_record(ident_a, "10.0.0.1:5683")

    def txid() -> bytes:
        raw = bytearray(rng.getrandbits(8) for _ in range(16))
        raw[6] = (raw[6] & 0x0F) | 0x40
        raw[8] = (raw[8] & 0x3F) | 0x80
        return bytes(raw)

    contract_txid = txid()
    from .model import Contract

    contract = Contract(
        contract_id=contract_txid,
        requester_id=ident_b.node_id,
        provider_id=ident_a.node_id,
        capability=record_a.capabilities[0],
        agreed_schema=DataSchema.F32,
        qos={"max_latency_ms": 100.0, "min_precision": 0.99},
        expiry_us=VEC_TIMESTAMP_US + 600_000_000,
        adapter_id="pulse_to_ml_u16",
    )
    body = contract.body_bytes()

    eph_a = hashlib.sha256(b"tip-vectors-ephemeral-a").digest()
    eph_b = hashlib.sha256(b"tip-vectors-ephemeral-b").digest()
    from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

    eph_a_priv = X25519PrivateKey.from_private_bytes(eph_a)
    eph_b_priv = X25519PrivateKey.from_private_bytes(eph_b)
    eph_a_pub = eph_a_priv.public_key().public_bytes_raw()
    eph_b_pub = eph_b_priv.public_key().public_bytes_raw()
    session_b = establish_session(eph_b_priv, eph_a_pub, salt=contract_txid, initiator=True)

    sequence = {"a": 0, "b": 0}

    def build(name, signer, ptype, payload, flags=0, cap_hash=0, this_txid=None):
        key = "a" if signer is ident_a else "b"
        sequence[key] += 1
        packet = wire.build_packet(
            packet_type=int(ptype),
            transaction_id=this_txid or txid(),
            payload=payload,
            signing_key=signer.signing_private,
            sequence_number=sequence[key],
            timestamp_us=VEC_TIMESTAMP_US,
            ttl_ms=60_000,
            capability_hash=cap_hash,
            flags=flags,
        )
        return {"name": name, "raw": packet.raw, "signer": key, "expected": 0}

    fill_hash = wire.capability_hash("machine:fluid:fill")
    vectors = [
        build("00_discovery_announce", ident_a, wire.PacketType.DISCOVERY_ANNOUNCE,
              encode_payload(DiscoveryAnnounce(
                  node_id=ident_a.node_id,
                  capabilities=record_a.capabilities,
                  addresses=record_a.addresses,
                  signing_public=ident_a.signing_public,
                  txt_records=[{"cap": "machine:fluid:fill", "schema": "0",
                                "ver": "1.0.0", "sec": "1"}],
              ))),
        build("01_discovery_query", ident_b, wire.PacketType.DISCOVERY_QUERY,
              encode_payload(DiscoveryQuery(capability_id="machine:fluid:fill")),
              cap_hash=fill_hash),
        build("02_intent_request", ident_b, wire.PacketType.INTENT_REQUEST,
              encode_payload(IntentRequest(
                  capability_id="machine:fluid:fill",
                  desired_schema=DataSchema.F32,
                  params={"liquid": "water", "volume_ml": 500},
                  constraints={"max_latency_ms": 100, "min_precision": 0.99},
                  weights={"func": 0.4, "cost": 0.2, "trust": 0.2, "avail": 0.2},
              )), cap_hash=fill_hash, this_txid=contract_txid),
        build("03_intent_proposal", ident_a, wire.PacketType.INTENT_PROPOSAL,
              encode_payload(IntentProposal(
                  capability=record_a.capabilities[0],
                  measured_rtt_ms=0.0,
                  availability=0.99,
                  adapter_required=True,
                  ephemeral=SignedEphemeral(
                      eph_a_pub, sign_ephemeral(ident_a, eph_a_pub, contract_txid)),
              )), cap_hash=fill_hash, this_txid=contract_txid),
        build("04_contract_accept", ident_b, wire.PacketType.CONTRACT_ACCEPT,
              encode_payload(ContractAccept(
                  contract_body=body,
                  signature=ident_b.sign(body),
                  ephemeral=SignedEphemeral(
                      eph_b_pub, sign_ephemeral(ident_b, eph_b_pub, contract_txid)),
              )), flags=int(wire.Flags.REQUIRES_ACK), cap_hash=fill_hash,
              this_txid=contract_txid),
        build("06_contract_signed", ident_a, wire.PacketType.CONTRACT_SIGNED,
              encode_payload(ContractSigned(body, ident_a.sign(body))),
              flags=int(wire.Flags.REQUIRES_ACK), cap_hash=fill_hash,
              this_txid=contract_txid),
        build("08_data_response", ident_a, wire.PacketType.DATA_RESPONSE,
              encode_payload(DataResponse(contract_txid, b"\x19\x09\xc4")),
              flags=int(wire.Flags.HAS_ADAPTER), cap_hash=fill_hash,
              this_txid=contract_txid),
    ]

    # Encrypted DATA_REQUEST: seal with the session, binding the header AAD.
    request_payload = encode_payload(DataRequest(contract_txid, {"volume_ml": 500}))
    data_txid = txid()
    sequence["b"] += 1
    sealed_len = 8 + len(request_payload) + 16
    flags = int(wire.Flags.IS_ENCRYPTED)
    aad = wire.encode_header(wire.PacketHeader(
        magic=wire.MAGIC, version=wire.VERSION,
        packet_type=int(wire.PacketType.DATA_REQUEST),
        transaction_id=data_txid, payload_length=sealed_len,
        capability_hash=fill_hash, sequence_number=sequence["b"], flags=flags,
        timestamp_us=VEC_TIMESTAMP_US, ttl_ms=60_000, checksum=0, signature=bytes(64),
    ))
    sealed = seal(session_b, request_payload, aad)
    packet = wire.build_packet(
        packet_type=int(wire.PacketType.DATA_REQUEST),
        transaction_id=data_txid,
        payload=sealed,
        signing_key=ident_b.signing_private,
        sequence_number=sequence["b"],
        timestamp_us=VEC_TIMESTAMP_US,
        ttl_ms=60_000,
        capability_hash=fill_hash,
        flags=flags,
    )
    vectors.append({"name": "07_data_request_encrypted", "raw": packet.raw,
                    "signer": "b", "expected": 0})

    base = vectors[0]["raw"]
    negatives = [
        {"name": "90_truncated", "raw": base[:100], "signer": "a",
         "expected": ERROR_CODES["TooShort"]},
        {"name": "91_bad_magic", "raw": bytes([base[0] ^ 0xFF]) + base[1:], "signer": "a",
         "expected": ERROR_CODES["BadMagic"]},
        {"name": "92_bad_version", "raw": base[:2] + b"\x02" + base[3:], "signer": "a",
         "expected": ERROR_CODES["UnsupportedVersion"]},
        {"name": "93_corrupt_payload",
         "raw": base[:116] + bytes([base[116] ^ 0x01]) + base[117:], "signer": "a",
         "expected": ERROR_CODES["ChecksumMismatch"]},
        {"name": "94_corrupt_checksum",
         "raw": base[:48] + bytes([base[48] ^ 0x01]) + base[49:], "signer": "a",
         "expected": ERROR_CODES["ChecksumMismatch"]},
        # The checksum covers the signature bytes, so a flipped signature
        # byte must surface as ChecksumMismatch (pipeline order), not
        # BadSignature.
        {"name": "95_corrupt_signature",
         "raw": base[:60] + bytes([base[60] ^ 0x01]) + base[61:], "signer": "a",
         "expected": ERROR_CODES["ChecksumMismatch"]},
        {"name": "96_wrong_key", "raw": base, "signer": "b",
         "expected": ERROR_CODES["BadSignature"]},
    ]
    vectors.extend(negatives)
    keyring = {"a": ident_a, "b": ident_b}
    return vectors, keyring


def validation_verdict(raw: bytes, public: bytes, now_us: int) -> int:
    """Numeric pipeline verdict (0 = valid), shared with the edge client."""
    from .crypto import BadSignature as CryptoBadSignature

    try:
        wire.validate_packet(raw, public, now_us, ReplayCache())
        return 0
    except wire.TooShort:
        return ERROR_CODES["TooShort"]
    except wire.BadMagic:
        return ERROR_CODES["BadMagic"]
    except wire.UnsupportedVersion:
        return ERROR_CODES["UnsupportedVersion"]
    except wire.ChecksumMismatch:
        return ERROR_CODES["ChecksumMismatch"]
    except CryptoBadSignature:
        return ERROR_CODES["BadSignature"]
    except wire.ReplayDetected:
        return ERROR_CODES["ReplayDetected"]
    except wire.Expired:
        return ERROR_CODES["Expired"]


def cmd_vectors(args) -> int:
    vectors, keyring = build_vectors()
    os.makedirs(args.out, exist_ok=True)
    lines = [
        "# TIP golden vector manifest v1",
        "# verdict codes: 0=valid 1=TooShort 2=BadMagic 3=UnsupportedVersion"
        " 4=ChecksumMismatch 5=BadSignature 6=ReplayDetected 7=Expired",
        f"validation_now={VEC_VALIDATION_NOW_US}",
        "",
    ]
    coap_rng = random.Random("tip-golden-vectors-coap")
    for vector in vectors:
        raw = vector["raw"]
        signer = keyring[vector["signer"]]
        verdict = validation_verdict(raw, signer.signing_public, VEC_VALIDATION_NOW_US)
        if verdict != vector["expected"]:
            print(f"self-check failed for {vector['name']}: {verdict} != {vector['expected']}",
                  file=sys.stderr)
            return EXIT_RUNTIME
        bin_name = f"{vector['name']}.bin"
        coap_name = f"{vector['name']}.coap.bin"
        with open(os.path.join(args.out, bin_name), "wb") as fh:
            fh.write(raw)
        with open(os.path.join(args.out, coap_name), "wb") as fh:
            fh.write(coap.coap_wrap(raw, coap_rng))
        lines.append(f"[vector {vector['name']}]")
        lines.append(f"file={bin_name}")
        lines.append(f"coap_file={coap_name}")
        lines.append(f"signer_pubkey={signer.signing_public.hex()}")
        lines.append(f"expected={vector['expected']}")
        if len(raw) >= wire.HEADER_LEN:
            for field_name, (offset, size) in wire.FIELD_LAYOUT.items():
                lines.append(f"{field_name}={raw[offset:offset + size].hex()}")
            lines.append(f"payload_sha256={hashlib.sha256(raw[wire.HEADER_LEN:]).hexdigest()}")
        lines.append("")
    manifest = "\n".join(lines)
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write(manifest)
    print(f"wrote {len(vectors)} vectors to {args.out}")
    return EXIT_OK


# --- scenario -------------------------------------------------------------------


def cmd_scenario(args) -> int:
    builtin = {
        "factory": lambda: run_factory_scenario(seed=args.seed, requests=6),
        "factory-heal": lambda: run_factory_scenario(seed=args.seed, requests=8,
                                                     degrade_after=2),
        "factory-outage": lambda: run_factory_scenario(seed=args.seed, requests=6,
                                                       mute_fillers_after=2),
    }
    try:
        if args.script in builtin:
            report = builtin[args.script]()
        else:
            with open(args.script) as fh:
                report = run_script(fh.read(), seed=args.seed)
    except FileNotFoundError:
        print(f"no such script: {args.script}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    output = report.to_jsonl()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(output)
        print(f"report: {args.out} ({len(report.records)} records, digest {report.digest()[:16]})")
    else:
        sys.stdout.write(output)
    return EXIT_OK


# --- bench ----------------------------------------------------------------------


def _bench_scoring(size: int) -> dict:
    rng = random.Random(42)
    intent = Intent(
        "bench:cap", DataSchema.F32,
        constraints={"min_precision": 0.5},
        weights={"func": 0.4, "cost": 0.2, "trust": 0.2, "avail": 0.2},
    )
    observations = []
    for i in range(size):
        seed = hashlib.sha256(f"bench{i}".encode()).digest()
        record = NodeRecord.__new__(NodeRecord)
        record.node_id = seed
        record.signing_public = b""
        record.addresses = [f"10.0.0.{i % 250}:5683"]
        record.capabilities = []
        record.last_seen = 0
        record.availability = rng.random()
        capability = Capability("bench:cap", DataSchema.F32, "1.0.0",
                                0.5 + rng.random() / 2, 10.0)
        observations.append(CandidateObservation(record, capability, rng.random() * 400,
                                                 record.availability))
    started = time.perf_counter()
    ranked = score(intent, observations)
    elapsed_ms = (time.perf_counter() - started) * 1000
    return {"kind": "scoring", "size": size, "wall_ms": round(elapsed_ms, 3),
            "best": ranked[0].total}


def _bench_translate(size: int) -> dict:
    registry = AdapterRegistry()
    compiled = registry.register(parse_adapter_toml(
        '[adapter]\nid = "c2f"\nsource_schema = "f32"\ntarget_schema = "f32"\n'
        'formula = "x * 1.8 + 32.0"\n'))
    cfg = SandboxConfig()
    execute_scalar(compiled, 1.0, cfg)  # warm the IR cache
    samples = []
    for i in range(size):
        started = time.perf_counter()
        execute_scalar(compiled, float(i % 100), cfg)
        samples.append((time.perf_counter() - started) * 1e6)
    return {
        "kind": "translate", "size": size,
        "mean_us": round(statistics.fmean(samples), 2),
        "median_us": round(statistics.median(samples), 2),
    }


def _bench_crypto(size: int) -> dict:
    handshake_samples = []
    for i in range(max(size // 100, 10)):
        started = time.perf_counter()
        a_priv, a_pub = generate_ephemeral()
        b_priv, b_pub = generate_ephemeral()
        establish_session(a_priv, b_pub, salt=b"bench", initiator=True)
        establish_session(b_priv, a_pub, salt=b"bench", initiator=False)
        handshake_samples.append((time.perf_counter() - started) * 1e6)
    a_priv, a_pub = generate_ephemeral()
    b_priv, b_pub = generate_ephemeral()
    sender = establish_session(a_priv, b_pub, salt=b"bench", initiator=True)
    receiver = establish_session(b_priv, a_pub, salt=b"bench", initiator=False)
    payload = bytes(1024)
    aad = bytes(116)
    seal_samples = []
    for _ in range(max(size, 100)):
        started = time.perf_counter()
        sealed = seal(sender, payload, aad)
        open_sealed(receiver, sealed, aad)
        seal_samples.append((time.perf_counter() - started) * 1e6 / 2)
    return {
        "kind": "crypto",
        "handshake_mean_us": round(statistics.fmean(handshake_samples), 1),
        "handshake_median_us": round(statistics.median(handshake_samples), 1),
        "seal_open_mean_us": round(statistics.fmean(seal_samples), 2),
    }


def cmd_bench(args) -> int:
    bench = {"scoring": _bench_scoring, "translate": _bench_translate,
             "crypto": _bench_crypto}[args.kind]
    result = bench(args.size)
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        print("  ".join(f"{k}={v}" for k, v in result.items()))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handlers = {
        "node": cmd_node,
        "intent": cmd_intent,
        "adapter": cmd_adapter,
        "vectors": cmd_vectors,
        "scenario": cmd_scenario,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
