"""Bayes filter over latent states and history bookkeeping.

Histories are plain tuples of ints. A history that ends in an observation,
``(o1, a1, ..., oh)``, has odd length; one that ends at an action boundary,
``(o1, a1, ..., o_{h-1}, a_{h-1})``, has even length.
"""

from __future__ import annotations

import numpy as np

from .errors import UnreachableObservation


def check_belief(b, n_states=None, tol=1e-10):
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or (n_states is not None and b.shape[0] != n_states):
        raise ValueError(f"belief has shape {b.shape}, expected ({n_states},)")
    if np.any(b < -tol) or abs(b.sum() - 1.0) > tol:
        raise ValueError("belief is not a probability vector")
    return b


def _kernel(model, order):
    if order is None or order == model.order:
        return model.kernel
    return model.with_order(order).kernel


def belief_update(model, b, a, o, order=None):
    """Posterior after taking action ``a`` and then observing ``o``."""
    u = np.asarray(b, dtype=float) @ _kernel(model, order)[a, o]
    z = u.sum()
    if z <= 0.0:
        raise UnreachableObservation(f"P(o={o} | b, a={a}) = 0")
    return u / z


def obs_predictive(model, b, a, order=None):
    """``P(o | b, a)`` for every observation ``o``."""
    return np.einsum("s,ost->o", np.asarray(b, dtype=float), _kernel(model, order)[a])


def initial_obs_probs(model):
    return model.d0 @ model.emission


def initial_belief(model, o):
    u = model.d0 * model.emission[:, o]
    z = u.sum()
    if z <= 0.0:
        raise UnreachableObservation(f"P(o1={o}) = 0")
    return u / z


def belief_of_history(model, tau, order=None):
    """Belief over the current latent state after an observation-ending history."""
    if len(tau) % 2 != 1:
        raise ValueError("history must end with an observation")
    b = initial_belief(model, tau[0])
    for i in range(1, len(tau), 2):
        b = belief_update(model, b, tau[i], tau[i + 1], order)
    return b


def reward_of_belief(model, b):
    """Expected reward ``r(b, a)`` for every action."""
    return np.asarray(b) @ model.reward


def l1(b1, b2):
    return float(np.abs(np.asarray(b1) - np.asarray(b2)).sum())


def n_observations(tau):
    return (len(tau) + 1) // 2


def window(tau, T):
    """Last ``T`` observations (with interleaved actions) of a history.

    Histories ending in an observation keep ``T`` observations; histories ending
    at an action boundary keep ``T - 1`` observation-action pairs, which is the
    part of the window that precedes the next observation.
    """
    if T is None:
        return tuple(tau)
    keep = 2 * T - 1 if len(tau) % 2 == 1 else 2 * (T - 1)
    return tuple(tau[-keep:]) if keep > 0 else ()


def history_key(tau):
    return "-".join(str(int(x)) for x in tau)


def parse_history_key(key):
    return tuple(int(x) for x in key.split("-")) if key else ()
