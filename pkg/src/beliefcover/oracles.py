"""Brute-force reference computations that never call the Bayes filter.

They enumerate latent state paths directly and are used to cross-check the
recursive machinery.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import PREDICT_FIRST


def _path_weights(model, obs, acts, paths):
    """Joint probability of each latent path with the observation sequence.

    ``obs`` is (n, h), ``acts`` is (n, h - 1), ``paths`` is (P, h).
    Actions enter only through the transition kernel (policy factors cancel
    in any posterior).
    """
    E, T = model.emission, model.transition
    h = obs.shape[1]
    w = model.d0[paths[None, :, 0]] * E[paths[None, :, 0], obs[:, 0, None]]
    for k in range(1, h):
        emitter = paths[None, :, k] if model.order == PREDICT_FIRST else paths[None, :, k - 1]
        w = w * T[paths[None, :, k - 1], acts[:, k - 1, None], paths[None, :, k]]
        w = w * E[emitter, obs[:, k, None]]
    return w


def path_posteriors(model, histories):
    """Posterior over the final latent state for same-length histories.

    Returns ``(posteriors, evidence)`` where ``evidence`` is the probability of
    the observation sequence given the action sequence.
    """
    H = np.asarray(histories, dtype=np.int64)
    if H.ndim == 1:
        H = H[None, :]
    obs, acts = H[:, 0::2], H[:, 1::2]
    h = obs.shape[1]
    S = model.n_states
    paths = np.array(list(itertools.product(range(S), repeat=h)), dtype=np.int64)
    w = _path_weights(model, obs, acts, paths)
    post = np.zeros((len(H), S))
    for s in range(S):
        post[:, s] = w[:, paths[:, -1] == s].sum(axis=1)
    z = post.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return post / z[:, None], z


def mc_returns(model, obs_policy, n, horizon, rng):
    """Discounted returns of a memoryless policy ``obs_policy[o, a]``.

    Fully vectorized simulation of ``n`` rollouts of length ``horizon``.
    """
    S, O = model.n_states, model.n_obs
    gamma = model.discount
    cT = np.cumsum(model.transition, axis=-1)
    cE = np.cumsum(model.emission, axis=-1)
    cP = np.cumsum(obs_policy, axis=-1)

    def draw(cdf):
        u = rng.random(len(cdf))
        return np.minimum((u[:, None] > cdf).sum(axis=1), cdf.shape[1] - 1)

    s = draw(np.broadcast_to(np.cumsum(model.d0), (n, S)))
    o = draw(cE[s])
    ret = np.zeros(n)
    disc = 1.0
    for _ in range(horizon):
        a = draw(cP[o])
        ret += disc * model.reward[s, a]
        s_next = draw(cT[s, a])
        o = draw(cE[s_next] if model.order == PREDICT_FIRST else cE[s])
        s = s_next
        disc *= gamma
    return ret


def joint_trajectories(model, step_policy, H):
    """Enumerate ``(states, obs, acts, prob)`` over all length-``H`` rollouts.

    ``step_policy(h, history)`` returns the action distribution used at step
    ``h`` (1-based) after the observation-ending history. Rewards are read
    from the latent states, so no belief is ever formed.
    """
    S, A, O = model.n_states, model.n_actions, model.n_obs
    E, T = model.emission, model.transition
    out = []

    def rec(h, s, hist, states, p):
        if h > H:
            out.append((tuple(states), tuple(hist[0::2]), tuple(hist[1::2]), p))
            return
        emitter_obs = range(O)
        for o in emitter_obs:
            po = E[s, o] if model.order == PREDICT_FIRST or h == 1 else E[states[-2], o]
            if po == 0:
                continue
            tau = hist + (o,)
            pa = step_policy(h, tau)
            for a in range(A):
                if pa[a] == 0:
                    continue
                if h == H:
                    rec(h + 1, None, tau + (a,), states, p * po * pa[a])
                    continue
                for s2 in range(S):
                    pt = T[s, a, s2]
                    if pt > 0:
                        rec(h + 1, s2, tau + (a,), states + [s2], p * po * pa[a] * pt)

    for s in range(S):
        if model.d0[s] > 0:
            rec(1, s, (), [s], model.d0[s])
    return out
