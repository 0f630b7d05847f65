"""Intent lifecycle: discovery, scoring, contract negotiation, secure data
exchange, QoS monitoring and auto-healing.

Sessions move Discovering -> Scoring -> Negotiating -> Active, then
Active -> Healing -> Scoring on QoS violations (three consecutive, or one
provider timeout), with Failed reachable when no provider can be engaged
and Closed from anywhere. The failing provider is excluded for exactly one
healing round; reputation decay is the rehabilitation path.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from . import cbor
from .crypto import (
    AuthFailure,
    ephemeral_signature_valid,
    establish_session,
    generate_ephemeral,
    open_sealed,
    sign_ephemeral,
)
from .model import Contract, Intent, NodeRecord
from .negotiation import CandidateObservation, ScoredCandidate, score
from .node import Node
from .payloads import ContractAccept, ContractSigned, DataRequest, DataResponse, IntentRequest
from .payloads import SignedEphemeral, decode_payload
from .wire import Flags, PacketType, capability_hash

log = logging.getLogger(__name__)

QOS_VIOLATION_LIMIT = 3
LATENCY_WINDOW = 8


class OrchestratorError(Exception):
    pass


class NoProviders(OrchestratorError):
    pass


class AllCandidatesRejected(OrchestratorError):
    pass


class ProposalTimeout(OrchestratorError):
    pass


class ContractRejected(OrchestratorError):
    pass


class ContractExpired(OrchestratorError):
    pass


class RequestTimeout(OrchestratorError):
    pass


class TranslationError(OrchestratorError):
    pass


class NoAlternateProvider(OrchestratorError):
    pass


class DataError(OrchestratorError):
    """Provider answered with an error map instead of a value."""


class IllegalTransition(OrchestratorError):
    pass


class SessionState(enum.Enum):
    DISCOVERING = "discovering"
    SCORING = "scoring"
    NEGOTIATING = "negotiating"
    ACTIVE = "active"
    HEALING = "healing"
    CLOSED = "closed"
    FAILED = "failed"


_LEGAL = {
    SessionState.DISCOVERING: {SessionState.SCORING, SessionState.FAILED},
    SessionState.SCORING: {SessionState.NEGOTIATING, SessionState.FAILED},
    SessionState.NEGOTIATING: {SessionState.ACTIVE, SessionState.FAILED},
    SessionState.ACTIVE: {SessionState.HEALING},
    SessionState.HEALING: {SessionState.SCORING, SessionState.FAILED},
    SessionState.FAILED: set(),
    SessionState.CLOSED: set(),
}


@dataclass
class IntentSession:
    node: Node
    intent: Intent
    state: SessionState = SessionState.DISCOVERING
    contract: Contract | None = None
    session_keys: object | None = None
    provider: NodeRecord | None = None
    latency_window: deque = field(default_factory=lambda: deque(maxlen=LATENCY_WINDOW))
    violation_count: int = 0
    request_index: int = 0
    heal_count: int = 0
    scored: list[ScoredCandidate] = field(default_factory=list)
    last_error: OrchestratorError | None = None
    events: list[dict] = field(default_factory=list)
    transitions: list[tuple[SessionState, SessionState]] = field(default_factory=list)
    _on_resolved: Callable | None = None

    def advance(self, new_state: SessionState) -> None:
        if new_state == self.state:
            return
        if new_state != SessionState.CLOSED and new_state not in _LEGAL[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.transitions.append((self.state, new_state))
        self.state = new_state
        self.record("state", state=new_state.value)

    def record(self, kind: str, **fields) -> None:
        event = {"t": self.node.now_us(), "event": kind, **fields}
        self.events.append(event)
        self.node.emit(f"session_{kind}", **fields)

    def fail(self, error: OrchestratorError) -> None:
        self.last_error = error
        if self.state not in (SessionState.FAILED, SessionState.CLOSED):
            self.advance(SessionState.FAILED)
        self.record("failed", error=type(error).__name__, detail=str(error))
        if self._on_resolved is not None:
            callback, self._on_resolved = self._on_resolved, None
            callback(self)

    def close(self) -> None:
        if self.state != SessionState.CLOSED:
            self.advance(SessionState.CLOSED)

    @property
    def cap_hash(self) -> int:
        return capability_hash(self.intent.capability_required)


def submit_intent(
    node: Node,
    intent: Intent,
    *,
    timeout_us: int | None = None,
    on_resolved: Callable | None = None,
) -> IntentSession:
    """Start resolving an intent; returns the session immediately.

    on_resolved fires once the session reaches Active or Failed.
    """
    session = IntentSession(node, intent)
    session._on_resolved = on_resolved
    session.record("submitted", capability=intent.capability_required)
    _resolve(session, exclude=frozenset(), timeout_us=timeout_us)
    return session


def _resolve(session: IntentSession, exclude: frozenset, timeout_us: int | None) -> None:
    node = session.node

    def on_discovered(records: list[NodeRecord]) -> None:
        if session.state in (SessionState.CLOSED, SessionState.FAILED):
            return
        usable = [r for r in records if r.node_id != node.node_id]
        if not usable:
            session.fail(
                NoProviders(intent_desc(session)) if session.state == SessionState.DISCOVERING
                else NoAlternateProvider(intent_desc(session))
            )
            return
        session.advance(SessionState.SCORING)
        _probe_and_score(session, usable)

    node.discover(
        session.intent.capability_required,
        on_discovered,
        timeout_us=timeout_us,
        exclude=exclude,
    )


def intent_desc(session: IntentSession) -> str:
    return session.intent.capability_required


def _probe_and_score(session: IntentSession, records: list[NodeRecord]) -> None:
    node = session.node
    observations: list[CandidateObservation] = []
    remaining = {"n": len(records)}

    def on_probe(record: NodeRecord, rtt_ms: float | None) -> None:
        if rtt_ms is not None:
            capability = record.capability(session.intent.capability_required)
            if capability is not None:
                observations.append(
                    CandidateObservation(record, capability, rtt_ms, record.availability)
                )
        remaining["n"] -= 1
        if remaining["n"] == 0:
            _score_candidates(session, observations)

    for record in records:
        node.learn_record(record)
        node.ping(record.addresses[0], lambda rtt, r=record: on_probe(r, rtt))


def _score_candidates(session: IntentSession, observations: list[CandidateObservation]) -> None:
    if session.state in (SessionState.CLOSED, SessionState.FAILED):
        return
    node = session.node
    if not observations:
        session.fail(NoProviders("no candidate answered the probe"))
        return
    registry = node.registry
    adapter_available = registry.can_translate if registry is not None else (lambda s, t: s == t)
    ranked = score(
        session.intent,
        observations,
        reputation_lookup=node.reputation.get,
        adapter_available=adapter_available,
        now_us=node.now_us(),
        lambda_per_s=node.config.lambda_per_s,
    )
    # Hard constraints dominate: a zero functional utility is never contracted.
    eligible = [c for c in ranked if c.u_func > 0.0]
    session.scored = ranked
    session.record(
        "scored",
        candidates=[
            {
                "node": c.node.node_id.hex()[:16],
                "total": round(c.total, 6),
                "u_func": round(c.u_func, 6),
                "u_cost": round(c.u_cost, 6),
                "u_trust": round(c.u_trust, 6),
                "u_avail": round(c.u_avail, 6),
                "adapter": c.adapter_required,
            }
            for c in ranked
        ],
    )
    if not eligible:
        session.fail(AllCandidatesRejected("every candidate violates a hard constraint"))
        return
    session.advance(SessionState.NEGOTIATING)
    _try_candidate(session, eligible, 0)


def _try_candidate(session: IntentSession, candidates: list[ScoredCandidate], index: int) -> None:
    if session.state in (SessionState.CLOSED, SessionState.FAILED):
        return
    node = session.node
    if index >= len(candidates):
        session.fail(
            AllCandidatesRejected("no candidate completed negotiation")
            if session.heal_count == 0
            else NoAlternateProvider("no alternate completed negotiation")
        )
        return
    candidate = candidates[index]
    record = candidate.node
    intent = session.intent
    request = IntentRequest(
        capability_id=intent.capability_required,
        desired_schema=intent.desired_schema,
        params=intent.params,
        constraints=intent.constraints,
        weights=intent.weights,
        sender_record=node.self_record(),
    )

    def next_candidate(reason: str) -> None:
        session.record("candidate_rejected", provider=record.node_id.hex()[:16], reason=reason)
        node.reputation.record_outcome(record.node_id, False, node.now_us(),
                                       lambda_per_s=node.config.lambda_per_s)
        _try_candidate(session, candidates, index + 1)

    def on_proposal(frm, sender_id, packet, msg) -> None:
        if session.state in (SessionState.CLOSED, SessionState.FAILED):
            return
        if not hasattr(msg, "capability"):
            next_candidate("malformed proposal")
            return
        from .negotiation import functional_utility

        try:
            registry = node.registry
            u_func, adapter_required = functional_utility(
                intent, msg.capability,
                registry.can_translate if registry is not None else (lambda s, t: s == t),
            )
        except Exception:
            next_candidate("capability mismatch")
            return
        if u_func <= 0.0:
            next_candidate("hard constraint violated at proposal time")
            return
        if msg.ephemeral is None or not ephemeral_signature_valid(
            record.signing_public, msg.ephemeral.public,
            packet.header.transaction_id, msg.ephemeral.signature,
        ):
            next_candidate("bad ephemeral signature")
            return
        adapter_id = None
        if adapter_required:
            compiled = node.registry.lookup(msg.capability.schema, intent.desired_schema)
            if compiled is None:
                next_candidate("no adapter for schema pair")
                return
            adapter_id = compiled.spec.id
        _establish_contract(session, candidates, index, record, msg,
                            packet.header.transaction_id, adapter_id)

    node.learn_record(record)
    node.send_request(
        record.addresses[0],
        PacketType.INTENT_REQUEST,
        request,
        cap_hash=session.cap_hash,
        timeout_us=node.config.proposal_timeout_us,
        on_reply=on_proposal,
        on_timeout=lambda: next_candidate("proposal timeout"),
    )


def _establish_contract(
    session: IntentSession,
    candidates: list[ScoredCandidate],
    index: int,
    record: NodeRecord,
    proposal,
    txid: bytes,
    adapter_id: str | None,
) -> None:
    node = session.node
    intent = session.intent
    qos = {
        key: float(intent.constraints[key])
        for key in ("max_latency_ms", "min_precision")
        if key in intent.constraints
    }
    contract = Contract(
        contract_id=txid,
        requester_id=node.node_id,
        provider_id=record.node_id,
        capability=proposal.capability,
        agreed_schema=intent.desired_schema,
        qos=qos,
        expiry_us=node.now_us() + node.config.contract_ttl_us,
        adapter_id=adapter_id,
    )
    body = contract.body_bytes()
    contract.requester_signature = node.identity.sign(body)
    eph_priv, eph_pub = generate_ephemeral()
    keys = establish_session(eph_priv, proposal.ephemeral.public, salt=txid, initiator=True)
    accept = ContractAccept(
        contract_body=body,
        signature=contract.requester_signature,
        ephemeral=SignedEphemeral(eph_pub, sign_ephemeral(node.identity, eph_pub, txid)),
    )

    def next_candidate(reason: str) -> None:
        session.record("candidate_rejected", provider=record.node_id.hex()[:16], reason=reason)
        node.reputation.record_outcome(record.node_id, False, node.now_us(),
                                       lambda_per_s=node.config.lambda_per_s)
        _try_candidate(session, candidates, index + 1)

    def on_signed(frm, sender_id, packet, msg) -> None:
        if session.state in (SessionState.CLOSED, SessionState.FAILED):
            return
        if not isinstance(msg, ContractSigned) or msg.contract_body != body:
            next_candidate("tampered or missing counter-signature")
            return
        from .crypto import verify

        if not verify(record.signing_public, body, msg.signature):
            next_candidate("bad provider signature")
            return
        contract.provider_signature = msg.signature
        session.contract = contract
        session.session_keys = keys
        session.provider = record
        session.violation_count = 0
        if intent.params.get("stream"):
            _register_stream_route(session, record)
        session.advance(SessionState.ACTIVE)
        session.record(
            "contract",
            contract=contract.contract_id.hex(),
            provider=record.node_id.hex()[:16],
            adapter=adapter_id,
            heal=session.heal_count,
        )
        if session._on_resolved is not None:
            callback, session._on_resolved = session._on_resolved, None
            callback(session)

    flags = Flags.REQUIRES_ACK
    if intent.params.get("stream"):
        flags |= Flags.IS_STREAMING
    node.send_request(
        record.addresses[0],
        PacketType.CONTRACT_ACCEPT,
        accept,
        txid=txid,
        flags=flags,
        cap_hash=session.cap_hash,
        timeout_us=node.config.proposal_timeout_us,
        on_reply=on_signed,
        on_timeout=lambda: next_candidate("contract counter-signature timeout"),
        retransmit=True,
    )


def _register_stream_route(session: IntentSession, provider: NodeRecord) -> None:
    """Provider-push frames arrive outside any pending request; decrypt,
    translate and hand them to session.on_stream (or collect them)."""
    node = session.node
    session.stream_values = getattr(session, "stream_values", [])

    def on_push(packet, _msg) -> None:
        keys = session.session_keys
        contract = session.contract
        if keys is None or contract is None:
            return
        aad = packet.raw[:48] + bytes(68)
        try:
            plaintext = open_sealed(keys, packet.payload, aad)
            msg = decode_payload(PacketType.DATA_RESPONSE, plaintext)
        except Exception:
            return
        if not isinstance(msg, DataResponse) or msg.contract_id != contract.contract_id:
            return
        value = cbor.decode(msg.value_bytes)
        if packet.header.flags & Flags.HAS_ADAPTER and node.registry is not None:
            try:
                value = node.registry.translate(
                    value, contract.capability.schema, contract.agreed_schema
                )
            except Exception:
                return
        session.stream_values.append(value)
        callback = getattr(session, "on_stream", None)
        if callback is not None:
            callback(value)

    node.stream_routes[(provider.node_id, session.cap_hash)] = on_push


def request_data(
    session: IntentSession,
    params: dict,
    on_value: Callable,
    on_error: Callable | None = None,
    timeout_us: int | None = None,
) -> None:
    """Send one encrypted data request under the active contract; the reply
    is decrypted, translated when flagged, QoS-checked and delivered."""
    node = session.node
    errback = on_error or (lambda exc: None)
    if session.state != SessionState.ACTIVE or session.contract is None:
        errback(OrchestratorError(f"session is {session.state.value}"))
        return
    contract = session.contract
    if contract.expiry_us <= node.now_us():
        errback(ContractExpired(contract.contract_id.hex()))
        return
    session.request_index += 1
    index = session.request_index
    sent_at = node.now_us()
    provider_record = session.provider

    def on_reply(frm, sender_id, packet, _msg) -> None:
        latency_ms = (node.now_us() - sent_at) / 1000.0
        keys = session.session_keys
        if keys is None or session.contract is not contract:
            errback(DataError("session re-established while request was in flight"))
            return
        aad = packet.raw[:48] + bytes(68)
        try:
            plaintext = open_sealed(keys, packet.payload, aad)
        except AuthFailure as exc:
            errback(DataError(f"decryption failed: {exc}"))
            return
        try:
            msg = decode_payload(PacketType.DATA_RESPONSE, plaintext)
        except Exception as exc:
            errback(DataError(f"bad response payload: {exc}"))
            return
        if not isinstance(msg, DataResponse) or msg.contract_id != contract.contract_id:
            errback(DataError("response does not match the contract"))
            return
        value = cbor.decode(msg.value_bytes)
        if isinstance(value, dict) and "error" in value:
            node.reputation.record_outcome(contract.provider_id, False, node.now_us(),
                                           lambda_per_s=node.config.lambda_per_s)
            errback(DataError(str(value["error"])))
            return
        if packet.header.flags & Flags.HAS_ADAPTER:
            if node.registry is None:
                errback(TranslationError("response needs an adapter but none registered"))
                return
            try:
                value = node.registry.translate(
                    value, contract.capability.schema, contract.agreed_schema
                )
            except Exception as exc:
                errback(TranslationError(str(exc)))
                return
        session.latency_window.append(latency_ms)
        node.reputation.record_outcome(contract.provider_id, True, node.now_us(),
                                       lambda_per_s=node.config.lambda_per_s)
        session.record("data", index=index, latency_ms=round(latency_ms, 3), value=value)
        healing = monitor_qos(session, latency_ms)
        on_value(value)
        if healing:
            _heal(session)

    def on_timeout() -> None:
        session.record("data_timeout", index=index,
                       provider=contract.provider_id.hex()[:16])
        node.reputation.record_outcome(contract.provider_id, False, node.now_us(),
                                       lambda_per_s=node.config.lambda_per_s)
        errback(RequestTimeout(f"request {index}"))
        if session.state == SessionState.ACTIVE:
            _heal(session)  # one hard timeout triggers healing immediately

    node.send_request(
        provider_record.addresses[0] if provider_record else "",
        PacketType.DATA_REQUEST,
        DataRequest(contract.contract_id, params),
        cap_hash=session.cap_hash,
        session=session.session_keys,
        timeout_us=timeout_us or node.config.data_timeout_us,
        on_reply=on_reply,
        on_timeout=on_timeout,
    )


def monitor_qos(session: IntentSession, observed_latency_ms: float) -> bool:
    """Count consecutive QoS violations; True when healing must start."""
    if session.contract is None:
        return False
    limit = session.contract.qos.get("max_latency_ms")
    if limit is None:
        return False
    if observed_latency_ms > limit:
        session.violation_count += 1
        session.record("qos_violation", latency_ms=round(observed_latency_ms, 3),
                       count=session.violation_count)
    else:
        session.violation_count = 0
    return session.violation_count >= QOS_VIOLATION_LIMIT


def _heal(session: IntentSession) -> None:
    if session.state != SessionState.ACTIVE:
        return
    node = session.node
    failed_provider = session.contract.provider_id if session.contract else None
    session.advance(SessionState.HEALING)
    session.heal_count += 1
    session.violation_count = 0
    session.record("healing", failed=failed_provider.hex()[:16] if failed_provider else None)
    if failed_provider is not None:
        node.reputation.record_outcome(failed_provider, False, node.now_us(),
                                       lambda_per_s=node.config.lambda_per_s)
    node.cache.invalidate(session.intent.capability_required)
    session.contract = None
    session.session_keys = None
    session.provider = None
    # The failed provider sits out exactly this healing round.
    exclude = frozenset({failed_provider}) if failed_provider else frozenset()
    _resolve(session, exclude=exclude, timeout_us=None)


def heal(session: IntentSession) -> None:
    """QoS-triggered re-resolution, exposed for tests and tooling."""
    _heal(session)
