import numpy as np
import pytest
from sklearn.base import clone

from beliefcover import generators as G
from beliefcover.abstraction import (
    EpsilonCover,
    abstract_policy_table,
    build_eps_cover,
    build_short_memory_pomdp,
    build_truncation,
    compute_Lphi1,
    induce_abstract_mdp,
    short_memory_isomorphism,
)
from beliefcover.graph import enumerate_reachable
from beliefcover.policies import ConstantPolicy
from beliefcover.values import exact_value


def test_cover_radius_and_sklearn_contract(small_model):
    g = enumerate_reachable(small_model, 4)
    cov = EpsilonCover(eps=0.1).fit(g)
    assert cov.radius_ <= 0.1 + 1e-12
    labels = cov.transform(g)
    d = np.abs(g.beliefs - cov.centers_[labels]).sum(axis=1)
    assert d.max() <= 0.1 + 1e-12
    assert clone(cov).get_params() == {"eps": 0.1}


def test_cover_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        EpsilonCover(eps=0).fit(np.eye(2))


def test_cover_shrinks_with_eps(small_model):
    g = enumerate_reachable(small_model, 4)
    sizes = [build_eps_cover(g, e).n_abstract for e in (0.5, 0.2, 0.05)]
    assert sizes == sorted(sizes)


def test_exact_abstraction_reproduces_value():
    m = G.revealing(3, 2, np.random.default_rng(2), gamma=0.6)
    pi = ConstantPolicy([0.3, 0.7])
    g = enumerate_reachable(m, 6)
    phi = build_eps_cover(g, 1e-12)
    amdp = induce_abstract_mdp(g, phi, closure="nearest")
    _, V = amdp.evaluate(abstract_policy_table(pi, phi))
    roots = g.roots[g.roots >= 0]
    J_abs = float(g.root_prob[g.roots >= 0] @ V[phi.assignment[roots]])
    assert J_abs == pytest.approx(exact_value(m, pi).J, abs=1e-5)


@pytest.mark.parametrize("T", [1, 2])
def test_short_memory_isomorphism(T, rng):
    m = G.random_dense(2, 2, 2, rng, horizon=3)
    assert short_memory_isomorphism(m, T, 3).ok()


def test_short_memory_model_is_window_indexed(rng):
    m = G.random_dense(2, 2, 2, rng, horizon=3)
    sm = build_short_memory_pomdp(m, 1)
    assert sm.n_states == len(sm.state_labels)
    g = enumerate_reachable(m, 3)
    phi = build_truncation(g, 1)
    assert phi.n_abstract <= g.n_nodes


def test_lphi_constant():
    assert compute_Lphi1(0.0, 1.0, 1.0, gamma=0.5) == pytest.approx(compute_Lphi1(0.0, 1.0, 1.0, gamma=0.5))
    assert compute_Lphi1(1.0, 1.0, 1.0, gamma=0.5) > compute_Lphi1(0.0, 1.0, 1.0, gamma=0.5)


def test_stability_probes_are_reproducible(small_model):
    from beliefcover.abstraction import measure_stability
    from beliefcover.policies import uniform_policy

    g = enumerate_reachable(small_model, 4)
    a = measure_stability(small_model, g, uniform_policy(2), probes=40, seed=7)
    b = measure_stability(small_model, g, uniform_policy(2), probes=40, seed=7)
    assert a == b and a.lower_bound
    assert a.update_ratio_max <= 2.0 + 1e-9
