"""Exact policy values, occupancies and optimal values for tabular POMDPs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve

from .belief import window
from .errors import TreeTooLarge
from .graph import DEFAULT_NODE_CAP, enumerate_reachable
from .model import PREDICT_FIRST


@dataclass(eq=False)
class ValueResult:
    """Output of :func:`exact_value`.

    ``V`` and ``Q`` are aligned with ``graph`` node ids in tree mode and are
    ``None`` in chain mode.
    """

    J: float
    tail_bound: float
    method: str
    graph: object = None
    V: np.ndarray | None = None
    Q: np.ndarray | None = None

    def value_of(self, history):
        return float(self.V[self.graph.node(history)])


def tail_bound(model, depth):
    if model.horizon is not None:
        return 0.0 if depth >= model.horizon else model.rmax * (model.horizon - depth)
    return model.gamma**depth * model.rmax / (1.0 - model.gamma)


def depth_for_tail(model, tol):
    """Smallest depth whose certified tail is at most ``tol``."""
    if model.horizon is not None:
        return model.horizon
    if model.gamma == 0.0 or model.rmax == 0.0:
        return 1
    need = math.log(tol * (1.0 - model.gamma) / model.rmax) / math.log(model.gamma)
    return max(1, math.ceil(need))


def backward_induction(graph, policy_table=None, discount=None):
    """Values on a belief graph; frontier nodes contribute immediate reward only.

    With ``policy_table=None`` the maximizing action is taken (optimal values on
    the truncated tree).
    """
    gamma = graph.model.discount if discount is None else discount
    R = graph.rewards()
    V = np.zeros(graph.n_nodes)
    Q = np.zeros_like(R)
    for k in range(graph.max_depth, 0, -1):
        lvl = graph.level(k)
        if len(lvl) == 0:
            continue
        kids = graph.child[lvl]
        cont = np.where(kids >= 0, V[np.maximum(kids, 0)], 0.0)
        Q[lvl] = R[lvl] + gamma * (graph.obs_prob[lvl] * cont).sum(axis=-1)
        V[lvl] = Q[lvl].max(axis=1) if policy_table is None else (policy_table[lvl] * Q[lvl]).sum(axis=1)
    return V, Q


def initial_value(graph, V):
    ok = graph.roots >= 0
    return float(graph.root_prob[ok] @ V[graph.roots[ok]])


def exact_value(model, policy, eval_horizon=None, method="auto", node_cap=DEFAULT_NODE_CAP, tail_tol=1e-6):
    """Expected return ``J(pi)`` by exhaustive enumeration.

    ``method="tree"`` runs backward induction on the history tree truncated at
    ``eval_horizon``. ``method="chain"`` is available for policies with a finite
    window and discounted models; it solves the linear system of the
    (latent state, window) chain, which is exact without truncation.
    """
    if method == "auto":
        method = "chain" if policy.window is not None and model.horizon is None else "tree"
    if method == "chain":
        return ValueResult(J=_window_chain_value(model, policy), tail_bound=0.0, method="chain")
    if model.horizon is not None:
        depth = model.horizon if eval_horizon is None else eval_horizon
    else:
        depth = eval_horizon if eval_horizon is not None else depth_for_tail(model, tail_tol)
    graph = enumerate_reachable(model, depth, policy_support=policy, node_cap=node_cap)
    pi = policy.table(graph)
    V, Q = backward_induction(graph, pi)
    return ValueResult(
        J=initial_value(graph, V), tail_bound=tail_bound(model, depth), method="tree", graph=graph, V=V, Q=Q
    )


def _window_chain(model, policy):
    T = max(policy.window or 1, 1)
    S, A, O = model.n_states, model.n_actions, model.n_obs
    Tr, E, R = model.transition, model.emission, model.reward
    index, states, rows, cols, vals = {}, [], [], [], []
    rew = []

    def intern(key):
        if key not in index:
            index[key] = len(states)
            states.append(key)
        return index[key]

    init = {}
    for s in range(S):
        for o in range(O):
            p = model.d0[s] * E[s, o]
            if p > 0:
                k = intern((s, (o,)))
                init[k] = init.get(k, 0.0) + p
    i = 0
    while i < len(states):
        s, w = states[i]
        pi = policy.probs(w, None)
        rew.append(float(pi @ R[s]))
        for a in np.flatnonzero(pi > 0):
            for s2 in np.flatnonzero(Tr[s, a] > 0):
                src = s2 if model.order == PREDICT_FIRST else s
                for o2 in np.flatnonzero(E[src] > 0):
                    j = intern((int(s2), window(w + (int(a), int(o2)), T)))
                    rows.append(i)
                    cols.append(j)
                    vals.append(pi[a] * Tr[s, a, s2] * E[src, o2])
        i += 1
    n = len(states)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    d0 = np.zeros(n)
    for k, v in init.items():
        d0[k] = v
    return P, np.array(rew), d0, states


def _window_chain_value(model, policy):
    P, r, d0, _ = _window_chain(model, policy)
    A = sparse.identity(P.shape[0], format="csc") - model.gamma * P.tocsc()
    V = spsolve(A, r)
    return float(d0 @ np.atleast_1d(V))


@dataclass(eq=False)
class OccupancyTable:
    """Occupancy weights keyed by ``(history, action)`` or ``(state, history, action)``."""

    weights: dict
    normalization: str
    truncation_depth: int
    tail_mass_bound: float
    node_pos: int = 0

    def total(self):
        return float(sum(self.weights.values()))

    def items(self):
        return self.weights.items()


def step_weights(model, depth):
    """Per-level weight: ``(1 - gamma) gamma^(k-1)`` or ``1/H``."""
    ks = np.arange(1, depth + 1)
    if model.horizon is not None:
        return np.full(depth, 1.0 / model.horizon)
    return (1.0 - model.gamma) * model.gamma ** (ks - 1)


def node_occupancy(graph, policy_table):
    """Array form of the occupancy, shape (N, A)."""
    model = graph.model
    reach = graph.reach_probs(policy_table)
    w = step_weights(model, graph.max_depth)[graph.depth - 1]
    return (w * reach)[:, None] * policy_table


def occupancy(model, policy, depth=None, joint=False, node_cap=DEFAULT_NODE_CAP):
    """State-action occupancy of ``policy`` over enumerated histories.

    With ``joint=True`` keys are ``(s, history, a)``; the latent state is
    drawn from the node's belief.
    """
    if depth is None:
        depth = model.horizon if model.horizon is not None else depth_for_tail(model, 1e-6)
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if model.horizon is not None and depth != model.horizon:
        raise ValueError("finite-horizon occupancy must use depth = H")
    graph = enumerate_reachable(model, depth, policy_support=policy, node_cap=node_cap)
    d = node_occupancy(graph, policy.table(graph))
    weights = {}
    for i, a in zip(*np.nonzero(d)):
        h = graph.histories[i]
        if joint:
            for s in np.flatnonzero(graph.beliefs[i] > 0):
                weights[(int(s), h, int(a))] = float(d[i, a] * graph.beliefs[i, s])
        else:
            weights[(h, int(a))] = float(d[i, a])
    tail = 0.0 if model.horizon is not None else model.gamma**depth
    return OccupancyTable(
        weights=weights,
        normalization="finite-horizon" if model.horizon is not None else "discounted",
        truncation_depth=depth,
        tail_mass_bound=tail,
        node_pos=1 if joint else 0,
    )


# ---------------------------------------------------------------- optimal values


def _prune_lines(alphas, tol=1e-12):
    """Upper envelope on the 2-state simplex; ``alphas`` has shape (m, 2)."""
    c = alphas[:, 0]
    m = alphas[:, 1] - alphas[:, 0]
    cur = int(np.lexsort((-m, -c))[0])
    keep = [cur]
    t = 0.0
    while True:
        better = m > m[cur] + tol
        if not better.any():
            break
        cand = np.flatnonzero(better)
        ts = (c[cur] - c[cand]) / (m[cand] - m[cur])
        ts = np.maximum(ts, t)
        t_next = ts.min()
        if t_next >= 1.0:
            break
        tied = cand[ts <= t_next + tol]
        cur = int(tied[np.argmax(m[tied])])
        keep.append(cur)
        t = t_next
    return alphas[keep]


def _prune_lp(alphas, tol=1e-10):
    alphas = np.unique(np.round(alphas, 14), axis=0)
    dominated = np.zeros(len(alphas), dtype=bool)
    for i in range(len(alphas)):
        others = np.delete(alphas, i, axis=0)
        if len(others) and np.any(np.all(others >= alphas[i] - 1e-14, axis=1)):
            dominated[i] = True
    alphas = alphas[~dominated]
    S = alphas.shape[1]
    keep = []
    for i in range(len(alphas)):
        others = np.delete(alphas, i, axis=0)
        if len(others) == 0:
            keep.append(i)
            continue
        # maximize delta s.t. b.(alpha_i - alpha_j) >= delta, b in simplex
        c = np.zeros(S + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-(alphas[i] - others), np.ones((len(others), 1))])
        res = linprog(
            c,
            A_ub=A_ub,
            b_ub=np.zeros(len(others)),
            A_eq=np.r_[np.ones(S), 0.0][None, :],
            b_eq=[1.0],
            bounds=[(0, None)] * S + [(None, None)],
            method="highs",
        )
        if res.status == 0 and -res.fun > tol:
            keep.append(i)
    # near-ties can all fail the margin test; fall back to the maximizers at
    # the simplex vertices and centre whenever the kept set misses them
    probes = np.vstack([np.eye(S), np.full(S, 1.0 / S)])
    vals = probes @ alphas.T
    for p in range(len(probes)):
        if not keep or vals[p, keep].max() < vals[p].max() - tol:
            keep.append(int(np.argmax(vals[p])))
    return alphas[sorted(set(keep))]


def prune(alphas):
    if alphas.shape[1] == 2:
        return _prune_lines(alphas)
    return _prune_lp(alphas)


def optimal_alpha_vectors(model, horizon, max_vectors=5000):
    """Exact finite-horizon optimal value as a set of alpha vectors.

    ``V*_k(b) = max_i alphas[i] @ b`` after ``horizon`` backups from zero,
    using incremental pruning.
    """
    gamma = model.discount
    M = model.kernel
    alphas = np.zeros((1, model.n_states))
    for _ in range(horizon):
        per_action = []
        for a in range(model.n_actions):
            acc = None
            for o in range(model.n_obs):
                g = alphas @ M[a, o].T
                acc = g if acc is None else prune((acc[:, None, :] + g[None, :, :]).reshape(-1, model.n_states))
                if len(acc) > max_vectors:
                    raise TreeTooLarge(f"more than {max_vectors} alpha vectors")
            per_action.append(model.reward[:, a] + gamma * acc)
        alphas = prune(np.vstack(per_action))
    return alphas


def alpha_value(alphas, b):
    return float(np.max(alphas @ np.asarray(b)))
