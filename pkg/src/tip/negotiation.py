"""Candidate scoring, AHP weight derivation and reputation bookkeeping.

Total utility is the weighted sum of four normalized indices (functional
fit, cost/proximity, trust, availability). Proximity decays rationally with
RTT; trust combines the decayed reputation score with a logistic confidence
in the interaction count, so sparsely observed nodes stay near neutral.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .model import Capability, DataSchema, Intent, NodeRecord, WEIGHT_KEYS

log = logging.getLogger(__name__)

R_NEUTRAL = 0.5
DECAY_LAMBDA_PER_S = 9.6e-7
# Note: this rate constant implies a half-life of ~8.4 days; it is kept as
# the explicit default and is configurable.
REPUTATION_ETA = 0.1
CONFIDENCE_MIDPOINT = 20.0
CONFIDENCE_STEEPNESS = 0.1
AHP_RANDOM_INDEX_4 = 0.90
AHP_CR_THRESHOLD = 0.1


class NegotiationError(Exception):
    pass


class NegativeRtt(NegotiationError):
    pass


class ClockRegression(NegotiationError):
    pass


class CapabilityMismatch(NegotiationError):
    pass


class NoCandidates(NegotiationError):
    pass


class NotReciprocal(NegotiationError):
    pass


class NonPositiveEntry(NegotiationError):
    pass


def proximity_utility(rtt_ms: float) -> float:
    """Rational decay: 1 / (1 + rtt/100)."""
    if rtt_ms < 0:
        raise NegativeRtt(f"rtt {rtt_ms} ms")
    return 1.0 / (1.0 + rtt_ms / 100.0)


def confidence(interactions: int) -> float:
    """Logistic confidence in the interaction count, midpoint at 20."""
    exponent = -CONFIDENCE_STEEPNESS * (interactions - CONFIDENCE_MIDPOINT)
    if exponent > 700.0:  # exp() overflows past ~709
        return 0.0
    return 1.0 / (1.0 + math.exp(exponent))


@dataclass
class ReputationRecord:
    node_id: bytes
    score: float = R_NEUTRAL
    interaction_count: int = 0
    last_update: int = 0  # epoch microseconds


def decayed_score(
    rep: ReputationRecord, now_us: int, lambda_per_s: float = DECAY_LAMBDA_PER_S
) -> float:
    """Exponential relaxation toward neutral 0.5."""
    if now_us < rep.last_update:
        raise ClockRegression(f"now {now_us} < last_update {rep.last_update}")
    elapsed_s = (now_us - rep.last_update) / 1e6
    return R_NEUTRAL + (rep.score - R_NEUTRAL) * math.exp(-lambda_per_s * elapsed_s)


def decay_reputation(
    rep: ReputationRecord, now_us: int, lambda_per_s: float = DECAY_LAMBDA_PER_S
) -> ReputationRecord:
    """Apply the decay in place and stamp the update time."""
    rep.score = decayed_score(rep, now_us, lambda_per_s)
    rep.last_update = now_us
    return rep


def trust_utility(
    rep: ReputationRecord | None, now_us: int, lambda_per_s: float = DECAY_LAMBDA_PER_S
) -> float:
    """Decayed reputation discounted toward neutral by confidence."""
    if rep is None:
        return R_NEUTRAL
    decayed = decayed_score(rep, now_us, lambda_per_s)
    return R_NEUTRAL + (decayed - R_NEUTRAL) * confidence(rep.interaction_count)


def update_reputation(
    rep: ReputationRecord,
    success: bool,
    now_us: int,
    eta: float = REPUTATION_ETA,
    lambda_per_s: float = DECAY_LAMBDA_PER_S,
) -> ReputationRecord:
    """Decay first, then move toward the outcome target by a fixed fraction."""
    decay_reputation(rep, now_us, lambda_per_s)
    target = 1.0 if success else 0.0
    rep.score = min(1.0, max(0.0, rep.score + eta * (target - rep.score)))
    rep.interaction_count += 1
    return rep


def functional_utility(
    intent: Intent,
    cap: Capability,
    adapter_available: Callable[[DataSchema, DataSchema], bool],
) -> tuple[float, bool]:
    """Fit of a capability to the intent: hard constraints zero it out,
    a schema mismatch costs 10% when an adapter can bridge it."""
    if cap.id != intent.capability_required:
        raise CapabilityMismatch(f"{cap.id!r} != {intent.capability_required!r}")
    min_precision = intent.constraints.get("min_precision")
    if min_precision is not None and cap.precision < min_precision:
        return 0.0, False
    min_rate = intent.constraints.get("min_rate_hz")
    if min_rate is not None and cap.rate_hz < min_rate:
        return 0.0, False
    if cap.schema == intent.desired_schema:
        return 1.0, False
    if adapter_available(cap.schema, intent.desired_schema):
        return 0.9, True
    return 0.0, False


@dataclass
class CandidateObservation:
    """Raw observations about one candidate, prior to scoring."""

    record: NodeRecord
    capability: Capability
    rtt_ms: float
    availability: float = 1.0


@dataclass
class ScoredCandidate:
    node: NodeRecord
    u_func: float
    u_cost: float
    u_trust: float
    u_avail: float
    total: float
    adapter_required: bool


def score(
    intent: Intent,
    candidates: Iterable[CandidateObservation],
    *,
    reputation_lookup: Callable[[bytes], ReputationRecord | None] = lambda _nid: None,
    adapter_available: Callable[[DataSchema, DataSchema], bool] = lambda _s, _t: False,
    now_us: int = 0,
    lambda_per_s: float = DECAY_LAMBDA_PER_S,
) -> list[ScoredCandidate]:
    """Score and rank candidates, best first, deterministically."""
    scored = []
    for obs in candidates:
        u_func, adapter_required = functional_utility(intent, obs.capability, adapter_available)
        u_cost = proximity_utility(obs.rtt_ms)
        u_trust = trust_utility(reputation_lookup(obs.record.node_id), now_us, lambda_per_s)
        u_avail = min(1.0, max(0.0, obs.availability))
        total = (
            intent.weights["func"] * u_func
            + intent.weights["cost"] * u_cost
            + intent.weights["trust"] * u_trust
            + intent.weights["avail"] * u_avail
        )
        scored.append(
            ScoredCandidate(obs.record, u_func, u_cost, u_trust, u_avail, total, adapter_required)
        )
    if not scored:
        raise NoCandidates(intent.capability_required)
    scored.sort(key=lambda c: (-c.total, -c.u_trust, c.node.node_id))
    return scored


@dataclass
class AhpResult:
    weights: dict
    lambda_max: float
    consistency_ratio: float
    inconsistent: bool


def ahp_weights(pairwise, *, max_iterations: int = 100, tolerance: float = 1e-9) -> AhpResult:
    """Principal eigenvector of a 4x4 positive reciprocal matrix by power
    iteration, L1-normalized; consistency ratio reported, never enforced."""
    a = np.asarray(pairwise, dtype=float)
    if a.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {a.shape}")
    if np.any(a <= 0):
        raise NonPositiveEntry("all entries must be > 0")
    for i in range(4):
        for j in range(4):
            if abs(a[i, j] * a[j, i] - 1.0) > 1e-6:
                raise NotReciprocal(f"a[{i}][{j}]*a[{j}][{i}] != 1")

    w = np.full(4, 0.25)
    for _ in range(max_iterations):
        nxt = a @ w
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - w)) < tolerance:
            w = nxt
            break
        w = nxt
    lambda_max = float((a @ w).sum())  # w is L1-normalized
    cr = ((lambda_max - 4.0) / 3.0) / AHP_RANDOM_INDEX_4
    cr = max(cr, 0.0)
    inconsistent = cr > AHP_CR_THRESHOLD
    if inconsistent:
        log.warning("AHP consistency ratio %.3f exceeds %.2f", cr, AHP_CR_THRESHOLD)
    weights = {k: float(w[i]) for i, k in enumerate(WEIGHT_KEYS)}
    return AhpResult(weights, lambda_max, cr, inconsistent)


class ReputationStore:
    """Per-node local reputation records with line-delimited persistence.

    File format: one record per line, `node_id_hex,score,count,last_update`.
    A corrupt file starts the store neutral rather than failing the node.
    """

    def __init__(self, records: dict[bytes, ReputationRecord] | None = None):
        self.records: dict[bytes, ReputationRecord] = records or {}

    def get(self, node_id: bytes) -> ReputationRecord | None:
        return self.records.get(node_id)

    def get_or_create(self, node_id: bytes, now_us: int) -> ReputationRecord:
        rep = self.records.get(node_id)
        if rep is None:
            rep = ReputationRecord(node_id, last_update=now_us)
            self.records[node_id] = rep
        return rep

    def record_outcome(self, node_id: bytes, success: bool, now_us: int, **kw) -> ReputationRecord:
        return update_reputation(self.get_or_create(node_id, now_us), success, now_us, **kw)

    @classmethod
    def load(cls, path: str) -> "ReputationStore":
        records: dict[bytes, ReputationRecord] = {}
        try:
            with open(path, "r", encoding="ascii") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    nid_hex, score_s, count_s, last_s = line.split(",")
                    nid = bytes.fromhex(nid_hex)
                    records[nid] = ReputationRecord(
                        nid, float(score_s), int(count_s), int(last_s)
                    )
        except FileNotFoundError:
            return cls()
        except (ValueError, OSError) as exc:
            log.warning("reputation store %s unreadable (%s); starting neutral", path, exc)
            return cls()
        return cls(records)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for rep in self.records.values():
                fh.write(
                    f"{rep.node_id.hex()},{rep.score:.9f},{rep.interaction_count},{rep.last_update}\n"
                )
