import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tip import negotiation as neg
from tip.model import Capability, DataSchema, Intent, WEIGHT_KEYS

from conftest import identity_for


def make_intent(**kw):
    defaults = dict(
        capability_required="machine:fluid:fill",
        desired_schema=DataSchema.F32,
        constraints={"max_latency_ms": 100, "min_precision": 0.99},
        weights={"func": 0.4, "cost": 0.2, "trust": 0.2, "avail": 0.2},
    )
    defaults.update(kw)
    return Intent(**defaults)


def make_record(name: str, capability: Capability):
    ident = identity_for(name)
    from tip.model import NodeRecord

    return NodeRecord(
        node_id=ident.node_id,
        signing_public=ident.signing_public,
        addresses=[f"{name}:5683"],
        capabilities=[capability],
    )


class TestProximity:
    def test_zero_rtt(self):
        assert neg.proximity_utility(0.0) == 1.0

    def test_hundred_ms(self):
        assert neg.proximity_utility(100.0) == 0.5

    def test_three_hundred_ms(self):
        assert abs(neg.proximity_utility(300.0) - 0.25) < 1e-12

    def test_negative_rejected(self):
        with pytest.raises(neg.NegativeRtt):
            neg.proximity_utility(-1.0)

    @given(st.floats(min_value=0, max_value=1e6, allow_nan=False))
    def test_bounded(self, rtt):
        value = neg.proximity_utility(rtt)
        assert 0.0 < value <= 1.0

    @given(st.floats(min_value=0, max_value=1e5), st.floats(min_value=0.001, max_value=1e5))
    def test_strictly_decreasing(self, rtt, delta):
        assert neg.proximity_utility(rtt + delta) < neg.proximity_utility(rtt)


class TestConfidence:
    def test_midpoint(self):
        assert abs(neg.confidence(20) - 0.5) < 1e-12

    def test_zero_interactions(self):
        assert abs(neg.confidence(0) - 1.0 / (1.0 + math.exp(2.0))) < 1e-12
        assert abs(neg.confidence(0) - 0.11920292202211755) < 1e-12

    def test_many_interactions(self):
        assert neg.confidence(100) >= 0.999

    def test_strictly_increasing_with_limits(self):
        values = [neg.confidence(i) for i in range(0, 200, 5)]
        assert all(a < b for a, b in zip(values, values[1:]))
        assert neg.confidence(-10**6) < 1e-9
        assert neg.confidence(10**6) == 1.0


class TestDecay:
    def test_no_elapsed_time(self):
        rep = neg.ReputationRecord(b"\x01" * 32, score=0.9, last_update=1000)
        assert neg.decayed_score(rep, 1000) == 0.9

    def test_half_life_point(self):
        rep = neg.ReputationRecord(b"\x01" * 32, score=1.0, last_update=0)
        elapsed_s = math.log(2) / neg.DECAY_LAMBDA_PER_S
        value = neg.decayed_score(rep, int(elapsed_s * 1e6))
        assert abs(value - 0.75) < 1e-6

    def test_asymptote(self):
        rep = neg.ReputationRecord(b"\x01" * 32, score=0.0, last_update=0)
        assert abs(neg.decayed_score(rep, 10**16) - 0.5) < 1e-6

    def test_clock_regression(self):
        rep = neg.ReputationRecord(b"\x01" * 32, score=1.0, last_update=2000)
        with pytest.raises(neg.ClockRegression):
            neg.decayed_score(rep, 1000)

    @given(st.floats(min_value=0, max_value=1), st.integers(min_value=0, max_value=10**14))
    def test_contraction_toward_neutral(self, score, elapsed_us):
        rep = neg.ReputationRecord(b"\x01" * 32, score=score, last_update=0)
        value = neg.decayed_score(rep, elapsed_us)
        assert abs(value - 0.5) <= abs(score - 0.5) + 1e-12
        if elapsed_us > 0 and score != 0.5:
            assert abs(value - 0.5) < abs(score - 0.5)


class TestTrust:
    def test_unknown_node_is_neutral(self):
        assert neg.trust_utility(None, 0) == 0.5

    def test_new_node_heavily_discounted(self):
        rep = neg.ReputationRecord(b"\x01" * 32, score=1.0, interaction_count=0, last_update=0)
        expected = 0.5 + 0.5 * neg.confidence(0)
        assert abs(neg.trust_utility(rep, 0) - expected) < 1e-12
        assert abs(neg.trust_utility(rep, 0) - 0.5596014610110588) < 1e-9

    def test_neutral_fixed_point(self):
        for count in (0, 5, 50, 500):
            rep = neg.ReputationRecord(b"\x01" * 32, 0.5, count, 0)
            assert neg.trust_utility(rep, 0) == 0.5

    def test_experienced_node_approaches_score(self):
        rep = neg.ReputationRecord(b"\x01" * 32, 1.0, 1000, 0)
        assert neg.trust_utility(rep, 0) > 0.999


class TestUpdateReputation:
    def test_single_success_from_neutral(self):
        rep = neg.ReputationRecord(b"\x01" * 32, 0.5, 0, 0)
        neg.update_reputation(rep, True, 0)
        assert abs(rep.score - 0.55) < 1e-12
        assert rep.interaction_count == 1

    def test_failures_monotone_to_zero(self):
        rep = neg.ReputationRecord(b"\x01" * 32, 0.5, 0, 0)
        previous = rep.score
        for _ in range(200):
            neg.update_reputation(rep, False, 0)
            assert rep.score <= previous
            previous = rep.score
        assert rep.score < 1e-8

    @given(st.lists(st.booleans(), max_size=60))
    def test_score_stays_bounded(self, outcomes):
        rep = neg.ReputationRecord(b"\x01" * 32, 0.5, 0, 0)
        now = 0
        for outcome in outcomes:
            now += 1_000_000
            neg.update_reputation(rep, outcome, now)
            assert 0.0 <= rep.score <= 1.0


class TestFunctionalUtility:
    CAP = Capability("machine:fluid:fill", DataSchema.F32, "1.0.0", 0.995, 10.0)

    def test_exact_match(self):
        assert neg.functional_utility(make_intent(), self.CAP, lambda s, t: False) == (1.0, False)

    def test_precision_violation_zeroes(self):
        low = Capability("machine:fluid:fill", DataSchema.F32, "1.0.0", 0.95, 10.0)
        assert neg.functional_utility(make_intent(), low, lambda s, t: True) == (0.0, False)

    def test_rate_violation_zeroes(self):
        intent = make_intent(constraints={"min_rate_hz": 100})
        assert neg.functional_utility(intent, self.CAP, lambda s, t: True) == (0.0, False)

    def test_schema_mismatch_with_adapter(self):
        u16 = Capability("machine:fluid:fill", DataSchema.U16, "1.0.0", 0.995, 10.0)
        value, adapter = neg.functional_utility(make_intent(), u16, lambda s, t: True)
        assert (value, adapter) == (0.9, True)

    def test_schema_mismatch_without_adapter(self):
        u16 = Capability("machine:fluid:fill", DataSchema.U16, "1.0.0", 0.995, 10.0)
        assert neg.functional_utility(make_intent(), u16, lambda s, t: False) == (0.0, False)

    def test_capability_mismatch(self):
        other = Capability("machine:rinse:wash", DataSchema.F32)
        with pytest.raises(neg.CapabilityMismatch):
            neg.functional_utility(make_intent(), other, lambda s, t: False)


class TestScore:
    CAP = Capability("machine:fluid:fill", DataSchema.F32, "1.0.0", 0.995, 10.0)

    def observation(self, name, rtt=0.0, availability=1.0):
        return neg.CandidateObservation(make_record(name, self.CAP), self.CAP, rtt, availability)

    def test_perfect_candidate_scores_one(self):
        intent = make_intent(weights={"func": 0.25, "cost": 0.25, "trust": 0.25, "avail": 0.25})
        rep = neg.ReputationRecord(b"\x01" * 32, 1.0, 10**6, 0)
        ranked = neg.score(intent, [self.observation("p1")],
                           reputation_lookup=lambda _n: rep)
        assert abs(ranked[0].total - 1.0) < 1e-9

    def test_equal_weights_mixed_utilities(self):
        # u = (1.0, 0.5, 0.5, 1.0) with weights 0.25 each -> 0.75
        intent = make_intent(weights={"func": 0.25, "cost": 0.25, "trust": 0.25, "avail": 0.25})
        ranked = neg.score(intent, [self.observation("p1", rtt=100.0, availability=1.0)])
        candidate = ranked[0]
        assert (candidate.u_func, candidate.u_cost, candidate.u_trust, candidate.u_avail) == (
            1.0, 0.5, 0.5, 1.0,
        )
        assert abs(candidate.total - 0.75) < 1e-9

    def test_total_is_weighted_sum(self):
        intent = make_intent()
        ranked = neg.score(intent, [self.observation("p1", rtt=42.0, availability=0.9)])
        c = ranked[0]
        expected = (intent.weights["func"] * c.u_func + intent.weights["cost"] * c.u_cost
                    + intent.weights["trust"] * c.u_trust + intent.weights["avail"] * c.u_avail)
        assert abs(c.total - expected) < 1e-9

    def test_deterministic_tiebreak_by_node_id(self):
        intent = make_intent()
        a, b = self.observation("pa"), self.observation("pb")
        first = neg.score(intent, [a, b])
        second = neg.score(intent, [b, a])
        assert [c.node.node_id for c in first] == [c.node.node_id for c in second]
        assert first[0].node.node_id < first[1].node.node_id

    def test_single_weight_matches_single_utility_ranking(self):
        observations = [
            self.observation("p1", rtt=10.0, availability=0.2),
            self.observation("p2", rtt=200.0, availability=0.9),
            self.observation("p3", rtt=50.0, availability=0.5),
        ]
        intent = make_intent(weights={"func": 0.0, "cost": 1.0, "trust": 0.0, "avail": 0.0})
        ranked = neg.score(intent, observations)
        by_cost = sorted(observations, key=lambda o: o.rtt_ms)
        assert [c.node.node_id for c in ranked] == [o.record.node_id for o in by_cost]

        intent = make_intent(weights={"func": 0.0, "cost": 0.0, "trust": 0.0, "avail": 1.0})
        ranked = neg.score(intent, observations)
        by_avail = sorted(observations, key=lambda o: -o.availability)
        assert [c.node.node_id for c in ranked] == [o.record.node_id for o in by_avail]

    def test_ranking_invariant_under_affine_rescaling(self):
        observations = [
            self.observation(f"p{i}", rtt=float(i * 37 % 211), availability=(i * 13 % 10) / 10)
            for i in range(12)
        ]
        ranked = neg.score(make_intent(), observations)
        order = [c.node.node_id for c in ranked]
        for scale, shift in ((2.0, 0.0), (0.5, 3.0), (100.0, -1.0)):
            rescaled = sorted(ranked, key=lambda c: (-(scale * c.total + shift),
                                                     -c.u_trust, c.node.node_id))
            assert [c.node.node_id for c in rescaled] == order

    def test_no_candidates(self):
        with pytest.raises(neg.NoCandidates):
            neg.score(make_intent(), [])

    def test_intent_weight_validation(self):
        with pytest.raises(ValueError):
            make_intent(weights={"func": 0.5, "cost": 0.5, "trust": 0.5, "avail": 0.5})
        with pytest.raises(ValueError):
            make_intent(weights={"func": 1.5, "cost": -0.5, "trust": 0.0, "avail": 0.0})


class TestAhp:
    def test_uniform_matrix(self):
        result = neg.ahp_weights([[1.0] * 4 for _ in range(4)])
        for key in WEIGHT_KEYS:
            assert abs(result.weights[key] - 0.25) < 1e-9
        assert abs(result.consistency_ratio) < 1e-9
        assert not result.inconsistent

    def test_recovers_constructed_weights(self):
        w = np.array([0.4, 0.3, 0.2, 0.1])
        matrix = [[w[i] / w[j] for j in range(4)] for i in range(4)]
        result = neg.ahp_weights(matrix)
        for i, key in enumerate(WEIGHT_KEYS):
            assert abs(result.weights[key] - w[i]) < 1e-6
        assert result.consistency_ratio < 1e-6

    def test_matches_dense_eigensolver_on_random_consistent(self):
        rng = np.random.default_rng(1234)
        for _ in range(25):
            w = rng.uniform(0.05, 1.0, size=4)
            w /= w.sum()
            matrix = np.outer(w, 1.0 / w)
            result = neg.ahp_weights(matrix)
            eigenvalues, eigenvectors = np.linalg.eig(matrix)
            principal = np.argmax(eigenvalues.real)
            oracle = np.abs(eigenvectors[:, principal].real)
            oracle /= oracle.sum()
            for i, key in enumerate(WEIGHT_KEYS):
                assert abs(result.weights[key] - oracle[i]) < 1e-6

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            w = rng.uniform(0.05, 1.0, size=4)
            matrix = np.outer(w, 1.0 / w)
            result = neg.ahp_weights(matrix)
            assert abs(sum(result.weights.values()) - 1.0) < 1e-9

    def test_inconsistent_matrix_flagged_not_rejected(self):
        matrix = [
            [1.0, 9.0, 1 / 9.0, 5.0],
            [1 / 9.0, 1.0, 9.0, 1 / 7.0],
            [9.0, 1 / 9.0, 1.0, 9.0],
            [1 / 5.0, 7.0, 1 / 9.0, 1.0],
        ]
        result = neg.ahp_weights(matrix)
        assert result.inconsistent
        assert result.consistency_ratio > 0.1
        assert abs(sum(result.weights.values()) - 1.0) < 1e-9

    def test_not_reciprocal(self):
        matrix = [[1.0] * 4 for _ in range(4)]
        matrix[0][1] = 2.0
        matrix[1][0] = 3.0
        with pytest.raises(neg.NotReciprocal):
            neg.ahp_weights(matrix)

    def test_non_positive_entry(self):
        matrix = [[1.0] * 4 for _ in range(4)]
        matrix[2][3] = 0.0
        with pytest.raises(neg.NonPositiveEntry):
            neg.ahp_weights(matrix)


class TestReputationStore:
    def test_save_load_roundtrip(self, tmp_path):
        path = str(tmp_path / "rep.txt")
        store = neg.ReputationStore()
        nid = identity_for("rep-node").node_id
        store.record_outcome(nid, True, 1_000_000)
        store.record_outcome(nid, True, 2_000_000)
        store.save(path)
        loaded = neg.ReputationStore.load(path)
        rep = loaded.get(nid)
        assert rep is not None
        assert rep.interaction_count == 2
        assert abs(rep.score - store.get(nid).score) < 1e-9

    def test_corrupt_file_starts_neutral(self, tmp_path):
        path = tmp_path / "rep.txt"
        path.write_text("zz,not,a,record\n")
        store = neg.ReputationStore.load(str(path))
        assert store.records == {}

    def test_missing_file_starts_neutral(self, tmp_path):
        store = neg.ReputationStore.load(str(tmp_path / "missing.txt"))
        assert store.records == {}
