import numpy as np
import pytest
from sklearn.base import clone

from beliefcover import generators as G
from beliefcover.abstraction import abstract_policy_table, build_eps_cover, induce_abstract_mdp
from beliefcover.data import gen_d1, gen_d2
from beliefcover.double_sampling import (
    DoubleSamplingEstimator,
    argmin_lowest,
    data_distribution,
    ds_fit,
    ds_loss,
    estimate_J,
    population_ds_loss,
)
from beliefcover.errors import SupportViolation
from beliefcover.fdvf import (
    ImportanceRatio,
    MinMaxFDVF,
    ResidualOracle,
    critic_class,
    critic_keys,
    fdvf_estimate,
    fdvf_fit,
    perturb_value,
    solve_fdvf,
    truncate_table,
)
from beliefcover.functions import FUTURE_PAIR, STATE_ACTION, FunctionClass, FunctionTable
from beliefcover.graph import enumerate_reachable
from beliefcover.policies import ConstantPolicy, MemorylessPolicy, random_history_policy, uniform_policy
from beliefcover.values import exact_value


@pytest.fixture
def ds_setup():
    rng = np.random.default_rng(5)
    m = G.revealing(3, 2, rng, gamma=0.5)
    g = enumerate_reachable(m, 6)
    pi = ConstantPolicy([0.2, 0.8])
    phi = build_eps_cover(g, 1e-12)
    amdp = induce_abstract_mdp(g, phi, closure="nearest")
    Q, _ = amdp.evaluate(abstract_policy_table(pi, phi))
    F = FunctionClass([FunctionTable(Q + s, STATE_ACTION, domain=amdp) for s in (0.0, 0.3, -0.5)])
    return m, g, pi, phi, amdp, F


def test_ties_go_to_lowest_index():
    assert argmin_lowest([1.0, 0.5, 0.5]) == 1


def test_double_sampling_picks_exact_q(ds_setup):
    m, g, pi, phi, amdp, F = ds_setup
    ds = gen_d1(m, uniform_policy(2), 5000, 0, 5, graph=g)
    res = ds_fit(F, pi, ds, g, phi=phi, amdp=amdp)
    assert res.chosen_index == 0
    assert res.J_hat == pytest.approx(exact_value(m, pi).J, abs=1e-4)


def test_loss_unbiased_for_population(ds_setup):
    m, g, pi, phi, amdp, F = ds_setup
    d = data_distribution(g, uniform_policy(2), max_depth=5)
    pop = population_ds_loss(F[1], pi, g, d, phi=phi, amdp=amdp)
    emp = np.mean([ds_loss(F[1], pi, gen_d1(m, uniform_policy(2), 4000, s, 5, graph=g), g, phi=phi, amdp=amdp) for s in range(5)])
    assert emp == pytest.approx(pop, rel=0.05)


def test_sklearn_wrapper(ds_setup):
    m, g, pi, phi, amdp, F = ds_setup
    est = DoubleSamplingEstimator(F, pi, g, phi=phi)
    assert set(clone(est).get_params()) == {"function_class", "policy", "graph", "mode", "phi"}
    ds = gen_d1(m, uniform_policy(2), 2000, 1, 5, graph=g)
    est.fit(ds)
    assert est.chosen_index_ == 0 and est.score(ds) <= 0.1


def test_estimate_J_reads_first_belief(ds_setup):
    m, g, pi, phi, amdp, F = ds_setup
    assert estimate_J(F[1], pi, g, phi=phi) == pytest.approx(estimate_J(F[0], pi, g, phi=phi) + 0.3)


@pytest.fixture
def fdvf_setup():
    rng = np.random.default_rng(0)
    m = G.random_dense(2, 2, 2, rng, horizon=2)
    pe = random_history_policy(2, 2, 2, rng)
    pb = random_history_policy(2, 2, 2, rng, min_prob=0.2)
    return rng, m, pe, pb


def test_true_fdvf_gives_policy_value(fdvf_setup):
    rng, m, pe, pb = fdvf_setup
    V, resid = solve_fdvf(m, pe)
    assert resid < 1e-9
    assert fdvf_estimate(V, model=m, pi_b=pb) == pytest.approx(exact_value(m, pe).J, abs=1e-9)


def test_minmax_selects_true_fdvf(fdvf_setup):
    rng, m, pe, pb = fdvf_setup
    V, _ = solve_fdvf(m, pe)
    Vs = FunctionClass([perturb_value(V, 0.5, rng), V, perturb_value(V, 1.0, rng)])
    oracle = ResidualOracle(m, pe, pb)
    Th = critic_class(Vs, oracle, critic_keys(2, 2, 2))
    mu = ImportanceRatio(pe, pb, model=m)
    ds = gen_d2(m, pb, 20000, 2, 3)
    res = fdvf_fit(Vs, Th, ds, mu)
    assert res.chosen_index == 1
    est = MinMaxFDVF(Vs, Th, mu).fit(ds)
    assert est.chosen_index_ == 1 and clone(est).get_params()["truncation_T"] is None


def test_ratio_refuses_unsupported_action():
    pe, pb = ConstantPolicy([0.5, 0.5]), ConstantPolicy([1.0, 0.0])
    with pytest.raises(SupportViolation):
        ImportanceRatio(pe, pb)(1, (0,))


def test_truncate_rejects_non_window_table():
    keys = [(1, (0,), (0,)), (2, (1, 0, 0), (0,)), (2, (0, 0, 0), (0,))]
    table = FunctionTable(np.array([1.0, 1.0, 2.0]), FUTURE_PAIR, keys=keys)
    assert truncate_table(table, 2).values.tolist() == [1.0, 1.0, 2.0]
    with pytest.raises(ValueError):
        truncate_table(table, 1)
