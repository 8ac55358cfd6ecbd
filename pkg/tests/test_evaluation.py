import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halstream.errors import ValidationError
from halstream.evaluation import evaluate_split, ndcg_at_k, ndcg_at_k_batch
from halstream.model import NodeMemory, init_params
from halstream.stream import EventLog, LabelEvent, SyntheticSpec, TemporalEdge, chronological_split, synth_generate


def brute_ndcg(pred, truth, K):
    """Reference NDCG: rank explicitly by (score desc, index asc), then search all orders for the ideal."""
    n = len(pred)
    ranking = sorted(range(n), key=lambda i: (-pred[i], i))
    kk = min(K, n)
    dcg = sum(truth[ranking[r]] / math.log2(r + 2) for r in range(kk))
    idcg = max(sum(truth[perm[r]] / math.log2(r + 2) for r in range(kk))
               for perm in itertools.permutations(range(n)))
    return 1.0 if idcg == 0 else dcg / idcg


class TestNDCG:
    def test_perfect_ranking(self):
        truth = np.array([0.1, 0.6, 0.3])
        assert ndcg_at_k(truth, truth, 10) == 1.0

    def test_worst_order_two_categories(self):
        assert ndcg_at_k([0.0, 1.0], [1.0, 0.0], 10) == pytest.approx(1 / math.log2(3), abs=1e-15)
        assert ndcg_at_k([0.0, 1.0], [1.0, 0.0], 10) == pytest.approx(0.6309, abs=1e-4)

    @given(n=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_uniform_truth_scores_one(self, n, seed):
        pred = np.random.default_rng(seed).standard_normal(n)
        assert ndcg_at_k(pred, np.full(n, 1 / n), 10) == pytest.approx(1.0, abs=1e-12)

    def test_empty_truth_is_one(self):
        assert ndcg_at_k([0.3, 0.2], [0.0, 0.0], 5) == 1.0

    def test_ties_broken_by_index(self):
        # equal scores: category 0 ranks first, so truth on 1 is at rank 2
        assert ndcg_at_k([1.0, 1.0], [0.0, 1.0], 1) == 0.0
        assert ndcg_at_k([1.0, 1.0], [1.0, 0.0], 1) == 1.0

    def test_errors(self):
        with pytest.raises(ValidationError):
            ndcg_at_k([0.1, 0.2], [1.0], 10)
        with pytest.raises(ValidationError):
            ndcg_at_k([0.1], [1.0], 0)

    def test_exhaustive_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n, K = int(rng.integers(1, 7)), int(rng.integers(1, 4))
            pred = rng.integers(0, 4, size=n).astype(float)  # integer scores exercise ties
            truth = rng.dirichlet(np.ones(n)) * (rng.random(n) < 0.7)
            assert abs(ndcg_at_k(pred, truth, K) - brute_ndcg(pred, truth, K)) <= 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        pred, truth = rng.standard_normal(12), rng.dirichlet(np.ones(12))
        base = ndcg_at_k(pred, truth, 10)
        for _ in range(10):
            a, b = rng.uniform(0.1, 3), rng.uniform(-5, 5)
            f = rng.choice([lambda x: a * x + b, lambda x: np.exp(a * x), lambda x: np.tanh(a * x) + x ** 3])
            assert ndcg_at_k(f(pred), truth, 10) == base

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30), K=st.integers(1, 15))
    @settings(max_examples=60, deadline=None)
    def test_range_and_batch_agreement(self, seed, n, K):
        rng = np.random.default_rng(seed)
        P, T = rng.standard_normal((4, n)), rng.dirichlet(np.ones(n), size=4)
        out = ndcg_at_k_batch(P, T, K)
        assert np.all((out >= 0) & (out <= 1 + 1e-12))
        np.testing.assert_array_equal(out, [ndcg_at_k(p, t, K) for p, t in zip(P, T)])


class TestEvaluateSplit:
    def test_no_labels_undefined(self):
        log = EventLog.from_records([TemporalEdge(0, 1, 0.0, np.zeros(0))], [], 2)
        rep = evaluate_split(np.zeros((2, 4)), NodeMemory(2, 4), log)
        assert rep.undefined and math.isnan(rep.ndcg_at_10)

    def test_oracle_model_scores_one(self):
        # a user whose memory is a single slot and a C mapping that slot to its label
        n, dim = 3, 4
        edges = [TemporalEdge(3, 1, 0.0, np.zeros(0)), TemporalEdge(3, 1, 1.0, np.zeros(0))]
        labels = [LabelEvent(3, 1.5, np.array([0.0, 1.0, 0.0]))]
        log = EventLog.from_records(edges, labels, n)
        C = np.zeros((n, dim))
        C[1, 1 + 1 % (dim - 1)] = 10.0
        rep = evaluate_split(C, NodeMemory(4, dim, decay=0.5), log)
        assert rep.ndcg_at_10 == 1.0 and rep.per_event.shape == (1,)

    def test_does_not_mutate_params(self):
        log = synth_generate(SyntheticSpec(n_users=5, events_per_user=60, label_period=5))
        C = init_params(log.n_categories, 8)
        C0 = C.copy()
        rep = evaluate_split(C, NodeMemory(log.n_nodes, 8), chronological_split(log).test)
        assert C.tobytes() == C0.tobytes()
        assert 0 <= rep.ndcg_at_10 <= 1
        assert rep.ndcg_at_10 == pytest.approx(rep.per_event.mean(), abs=1e-15)
