import json

import numpy as np
import pytest

from beliefcover import generators as G
from beliefcover.diagnostics import (
    LEMMAS,
    aggregate_coarse,
    compare_coverage,
    counter_example_pair,
    coverage_chi2,
    coverage_linf,
    expected_update_gap,
    verify_all,
    verify_lemma,
)
from beliefcover.errors import SupportViolation, UnknownLemma
from beliefcover.policies import MemorylessPolicy, random_history_policy
from beliefcover.values import OccupancyTable


def test_coverage_metrics_on_toy_tables():
    def occ(w):
        return OccupancyTable(w, "probability", 1, 0.0)

    d_b = occ({"x": 0.5, "y": 0.5})
    d_e = occ({"x": 1.0})
    assert coverage_linf(d_e, d_b) == 2.0
    assert coverage_chi2(d_e, d_b) == 2.0
    assert coverage_linf(occ({"z": 1.0}), d_b) == float("inf")
    with pytest.raises(SupportViolation):
        coverage_chi2(occ({"z": 1.0}), d_b)


def test_identical_policies_give_unit_coverage(rng):
    m = G.revealing(3, 2, rng, horizon=3)
    pi = MemorylessPolicy(rng.dirichlet(np.ones(2), size=3))
    rep = compare_coverage(m, pi, pi, 1, 3)
    for v in (rep.linf_fine, rep.linf_coarse, rep.chi2_fine, rep.chi2_coarse):
        assert v == pytest.approx(1.0)
    assert json.loads(rep.to_json())["construction"] == "aggregation"


@pytest.mark.parametrize("T", [1, 2, 3])
def test_coarse_never_exceeds_fine(rng, T):
    m = G.revealing(2, 2, rng, horizon=3)
    pe = random_history_policy(2, 2, 3, rng)
    pb = random_history_policy(2, 2, 3, rng, min_prob=0.1)
    rep = compare_coverage(m, pb, pe, T, 3)
    assert rep.regime == "one-hot" and rep.holds()


def test_window_equal_to_depth_is_lossless(rng):
    m = G.revealing(2, 2, rng, horizon=3)
    pe = random_history_policy(2, 2, 3, rng)
    pb = random_history_policy(2, 2, 3, rng, min_prob=0.1)
    rep = compare_coverage(m, pb, pe, 3, 3)
    assert rep.linf_coarse == pytest.approx(rep.linf_fine)


def test_counter_example_pointwise_expansion():
    for xi in (0.25, 0.1, 0.05, 0.01):
        m = G.counter_example(xi)
        b1, b2 = counter_example_pair(xi)
        exp, point = expected_update_gap(m, b1, b2, 0)
        d = np.abs(b1 - b2).sum()
        assert point / d == pytest.approx(1 / (4 * xi), rel=1e-12)
        assert exp <= 2 * d + 1e-9


def test_unknown_lemma():
    with pytest.raises(UnknownLemma):
        verify_lemma("no-such-lemma")


def test_verdicts_are_seed_stable():
    a = verify_lemma("obs-smoothness", trials=50, seed=3)
    b = verify_lemma("obs-smoothness", trials=50, seed=3)
    assert a == b and a.passed


def test_suite_lists_every_lemma():
    out = verify_all(trials=30, seed=1)
    assert {v.lemma_id for v in out} == set(LEMMAS) and len(out) == 7
    assert all(v.passed for v in out)
