"""Model families used by tests, experiments and the ``gen-model`` command."""

from __future__ import annotations

import numpy as np

from .errors import BadSpec
from .model import PREDICT_FIRST, TabularPOMDP, validate


def _dirichlet(rng, alpha, shape):
    return rng.dirichlet(np.full(shape[-1], alpha), size=shape[:-1])


def _finish(T, E, R, d0, gamma, horizon, order, rmax=1.0):
    if horizon is not None:
        gamma = 1.0
    model = TabularPOMDP(
        transition=T, emission=E, reward=R, d0=d0, rmax=rmax, gamma=gamma, horizon=horizon, order=order
    )
    return validate(model)


def random_dense(n_states, n_actions, n_obs, rng, gamma=0.9, horizon=None, alpha=1.0, order=PREDICT_FIRST):
    """Dirichlet rows everywhere; rewards uniform on [0, 1]."""
    T = _dirichlet(rng, alpha, (n_states, n_actions, n_states))
    E = _dirichlet(rng, alpha, (n_states, n_obs))
    d0 = rng.dirichlet(np.full(n_states, alpha))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return _finish(T, E, R, d0, gamma, horizon, order)


def revealing(n_states, n_actions, rng, gamma=0.9, horizon=None, alpha=1.0, permute=True):
    """Each state emits its own observation, so every reachable belief is one-hot."""
    perm = rng.permutation(n_states) if permute else np.arange(n_states)
    E = np.eye(n_states)[perm]
    T = _dirichlet(rng, alpha, (n_states, n_actions, n_states))
    d0 = rng.dirichlet(np.full(n_states, alpha))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return _finish(T, E, R, d0, gamma, horizon, PREDICT_FIRST)


def counter_example(xi, gamma=0.9, horizon=None):
    """Two states, one action, four observations, identity dynamics.

    State 1 emits ``(1/2, 0, 1/2 - xi, xi)`` and state 2 emits
    ``(0, 1/2, xi, 1/2 - xi)``. Observing ``o3`` expands the distance between
    the beliefs after ``o2`` and ``o4`` by the factor ``1 / (4 xi)``.
    """
    if not 0.0 < xi <= 0.25:
        raise BadSpec("xi must lie in (0, 1/4]")
    E = np.array([[0.5, 0.0, 0.5 - xi, xi], [0.0, 0.5, xi, 0.5 - xi]])
    T = np.eye(2)[:, None, :]
    R = np.array([[1.0], [0.0]])
    return _finish(T, E, R, np.array([0.5, 0.5]), gamma, horizon, PREDICT_FIRST)


def low_rank(n_states, n_actions, n_obs, rank, rng, gamma=0.9, horizon=None, alpha=1.0):
    """Emission matrix of rank ``rank``: states mix ``rank`` observation profiles."""
    basis = _dirichlet(rng, alpha, (rank, n_obs))
    weights = _dirichlet(rng, alpha, (n_states, rank))
    E = weights @ basis
    T = _dirichlet(rng, alpha, (n_states, n_actions, n_states))
    d0 = rng.dirichlet(np.full(n_states, alpha))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return _finish(T, E, R, d0, gamma, horizon, PREDICT_FIRST)


def fast_forgetting(n_states, n_actions, n_obs, rng, mixing=0.6, gamma=0.9, horizon=None, alpha=1.0):
    """Transitions blended toward a state-independent kernel.

    With weight ``mixing`` on the state-independent part, the predicted belief
    contracts by a factor of at least ``1 - mixing`` per step, so beliefs
    forget old observations geometrically.
    """
    if not 0.0 <= mixing <= 1.0:
        raise BadSpec("mixing must lie in [0, 1]")
    base = _dirichlet(rng, alpha, (n_states, n_actions, n_states))
    reset = _dirichlet(rng, alpha, (n_actions, n_states))
    T = (1.0 - mixing) * base + mixing * reset[None, :, :]
    E = _dirichlet(rng, alpha, (n_states, n_obs))
    d0 = rng.dirichlet(np.full(n_states, alpha))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return _finish(T, E, R, d0, gamma, horizon, PREDICT_FIRST)


def resetting(n_states, n_actions, n_obs, rng, gamma=0.9, horizon=None, alpha=1.0):
    """Next-state law depends on the action only.

    The belief after any history is determined by the last action and
    observation, so the reachable belief set is finite.
    """
    return fast_forgetting(n_states, n_actions, n_obs, rng, mixing=1.0, gamma=gamma, horizon=horizon, alpha=alpha)


def chain(n_states=1, reward=1.0, gamma=0.5, horizon=None):
    """Deterministic single-action cycle with constant reward."""
    T = np.roll(np.eye(n_states), 1, axis=1)[:, None, :]
    E = np.ones((n_states, 1))
    R = np.full((n_states, 1), reward)
    d0 = np.eye(n_states)[0]
    return _finish(T, E, R, d0, gamma, horizon, PREDICT_FIRST, rmax=max(reward, 1.0))


FAMILIES = ("random", "revealing", "counter-example", "low-rank", "fast-forgetting", "resetting", "chain")


def generate(spec: dict, rng) -> TabularPOMDP:
    """Build a model from a spec dict with a ``family`` key."""
    spec = dict(spec)
    family = spec.pop("family", None)
    common = {k: spec.pop(k) for k in ("gamma", "horizon") if k in spec}
    try:
        if family == "random":
            return random_dense(spec.pop("n_states"), spec.pop("n_actions"), spec.pop("n_obs"), rng, **common, **spec)
        if family == "revealing":
            return revealing(spec.pop("n_states"), spec.pop("n_actions"), rng, **common, **spec)
        if family == "counter-example":
            return counter_example(spec.pop("xi"), **common, **spec)
        if family == "low-rank":
            return low_rank(
                spec.pop("n_states"), spec.pop("n_actions"), spec.pop("n_obs"), spec.pop("rank"), rng, **common, **spec
            )
        if family == "fast-forgetting":
            return fast_forgetting(spec.pop("n_states"), spec.pop("n_actions"), spec.pop("n_obs"), rng, **common, **spec)
        if family == "resetting":
            return resetting(spec.pop("n_states"), spec.pop("n_actions"), spec.pop("n_obs"), rng, **common, **spec)
        if family == "chain":
            return chain(**common, **spec)
    except (KeyError, TypeError) as exc:
        raise BadSpec(f"bad parameters for family {family!r}: {exc}") from exc
    raise BadSpec(f"unknown family {family!r}; expected one of {FAMILIES}")
