import numpy as np
import pytest

from beliefcover import generators as G
from beliefcover.belief import belief_of_history, belief_update, obs_predictive, window
from beliefcover.errors import BadSpec, NonStochasticRow, SchemaMismatch, UnreachableObservation
from beliefcover.graph import enumerate_reachable
from beliefcover.model import TabularPOMDP, load_model, save_model, validate
from beliefcover.oracles import path_posteriors


def test_round_trip_preserves_hash(tmp_path, small_model):
    save_model(small_model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.hash() == small_model.hash()
    assert np.array_equal(back.transition, small_model.transition)


def test_validate_rejects_bad_rows():
    T = np.full((2, 1, 2), 0.6)
    with pytest.raises(NonStochasticRow):
        validate(TabularPOMDP(T, np.eye(2), np.zeros((2, 1)), np.array([0.5, 0.5])))


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SchemaMismatch):
        load_model(p)


@pytest.mark.parametrize("order", ["predict-first", "update-first"])
def test_filter_matches_enumeration(rng, order):
    m = G.random_dense(3, 2, 3, rng, order=order)
    g = enumerate_reachable(m, 3)
    idx = np.flatnonzero(g.depth == 3)
    post, _ = path_posteriors(m, [g.histories[i] for i in idx])
    assert np.abs(post - g.beliefs[idx]).max() < 1e-12


def test_update_is_normalized_and_predictive_sums_to_one(small_model, rng):
    b = rng.dirichlet(np.ones(3))
    p = obs_predictive(small_model, b, 1)
    assert p.sum() == pytest.approx(1.0)
    assert belief_update(small_model, b, 1, 0).sum() == pytest.approx(1.0)


def test_impossible_observation_raises():
    m = G.counter_example(0.1)
    b = np.array([1.0, 0.0])
    assert obs_predictive(m, b, 0)[1] == 0.0
    with pytest.raises(UnreachableObservation):
        belief_update(m, b, 0, 1)


def test_window_keeps_last_observations():
    tau = (0, 1, 1, 0, 2)
    assert window(tau, 1) == (2,)
    assert window(tau, 2) == (1, 0, 2)
    assert window(tau, 9) == tau


def test_history_belief_agrees_with_graph(small_model):
    g = enumerate_reachable(small_model, 3)
    i = int(np.flatnonzero(g.depth == 3)[-1])
    assert np.allclose(belief_of_history(small_model, g.histories[i]), g.beliefs[i])


def test_generator_rejects_unknown_family(rng):
    with pytest.raises(BadSpec):
        G.generate({"family": "nope"}, rng)
    with pytest.raises(BadSpec):
        G.counter_example(0.4)
