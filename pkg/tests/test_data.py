import numpy as np
import pytest

from beliefcover import data as D
from beliefcover import generators as G
from beliefcover.errors import HashMismatch, SchemaMismatch, SupportViolation
from beliefcover.graph import enumerate_reachable
from beliefcover.policies import ConstantPolicy, uniform_policy
from beliefcover.double_sampling import data_distribution


@pytest.fixture
def model(rng):
    return G.random_dense(2, 2, 2, rng, gamma=0.7)


def test_same_seed_same_bytes(tmp_path, model):
    a = D.gen_d1(model, uniform_policy(2), 200, 5, 4)
    b = D.gen_d1(model, uniform_policy(2), 200, 5, 4)
    D.save(a, tmp_path / "a")
    D.save(b, tmp_path / "b")
    assert (tmp_path / "a" / "data.jsonl").read_bytes() == (tmp_path / "b" / "data.jsonl").read_bytes()


def test_round_trip_and_tamper_detection(tmp_path, model):
    ds = D.gen_d2(model.with_horizon(3), uniform_policy(2), 50, 3, 1)
    D.save(ds, tmp_path)
    back = D.load(tmp_path)
    assert np.array_equal(back.obs, ds.obs) and np.array_equal(back.rews, ds.rews)
    body = (tmp_path / "data.jsonl").read_text()
    (tmp_path / "data.jsonl").write_text(body.replace("[0,", "[1,", 1) if "[0," in body else body.replace("[1,", "[0,", 1))
    with pytest.raises((HashMismatch, SchemaMismatch)):
        D.load(tmp_path)


def test_truncated_file_rejected(tmp_path, model):
    D.save(D.gen_d1(model, uniform_policy(2), 20, 1, 3), tmp_path)
    raw = (tmp_path / "data.jsonl").read_bytes()
    (tmp_path / "data.jsonl").write_bytes(raw[:-5])
    with pytest.raises(SchemaMismatch):
        D.load(tmp_path)


def test_prefix_depths_follow_law(model):
    ds = D.gen_d1(model, uniform_policy(2), 20000, 0, 4, prefix_dist=D.UNIFORM)
    freq = np.bincount(ds.h, minlength=5)[1:] / len(ds)
    assert np.allclose(freq, 0.25, atol=0.02)


def test_empirical_matches_exact_data_law(model):
    g = enumerate_reachable(model, 4)
    ds = D.gen_d1(model, uniform_policy(2), 40000, 2, 3, graph=g)
    d = data_distribution(g, uniform_policy(2), max_depth=3)
    ix = {h: i for i, h in enumerate(g.histories)}
    emp = np.zeros_like(d)
    for p, a in zip(ds.prefix, ds.a):
        emp[ix[tuple(p)], a] += 1
    emp /= len(ds)
    assert np.abs(emp - d).sum() < 0.05


def test_shared_mode_copies_reward(model):
    ds = D.gen_d1(model, uniform_policy(2), 100, 3, 3, mode=D.SHARED)
    assert np.array_equal(ds.rA, ds.rB)


def test_zero_probability_action_is_fine_but_support_checked(model):
    ds = D.gen_d1(model, ConstantPolicy([1.0, 0.0]), 50, 0, 2)
    assert set(ds.a.tolist()) == {0}
