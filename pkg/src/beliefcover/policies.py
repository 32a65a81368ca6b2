"""Policies over histories and beliefs.

Every policy answers ``probs(history, belief)`` with an action distribution.
Which argument it actually reads depends on the kind.
"""

from __future__ import annotations

import hashlib
import itertools
import json

import numpy as np

from .belief import belief_of_history, window
from .errors import DomainMismatch

DIST_TOL = 1e-12


def _check_dist(p, n_actions=None):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > DIST_TOL:
        raise ValueError(f"not an action distribution: {p}")
    if n_actions is not None and p.shape[0] != n_actions:
        raise ValueError(f"expected {n_actions} actions, got {p.shape[0]}")
    return p


class Policy:
    """Base class.

    Attributes
    ----------
    kind : str
    window : int or None
        Number of trailing observations the policy reads; ``None`` when it
        depends on the full history or on the belief.
    declared_L_pi : float or None
        Claimed Lipschitz constant in belief space.
    """

    kind = "abstract"
    window = None
    declared_L_pi = None

    def probs(self, history, belief=None):
        raise NotImplementedError

    def table(self, graph):
        """Action distributions for every node of a belief graph, shape (N, A)."""
        return np.array([self.probs(graph.histories[i], graph.beliefs[i]) for i in range(graph.n_nodes)])

    def to_dict(self):
        raise NotImplementedError

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class ConstantPolicy(Policy):
    kind = "constant"
    window = 0
    declared_L_pi = 0.0

    def __init__(self, dist):
        self.dist = _check_dist(dist)

    def probs(self, history, belief=None):
        return self.dist

    def table(self, graph):
        return np.broadcast_to(self.dist, (graph.n_nodes, self.dist.size)).copy()

    def to_dict(self):
        return {"kind": self.kind, "dist": self.dist.tolist()}


class LinearBeliefPolicy(Policy):
    """``pi(a | b) = sum_s b(s) K[s, a]``.

    The map is 1-Lipschitz from L1 on beliefs to L1 on action distributions.
    """

    kind = "belief-linear"
    declared_L_pi = 1.0

    def __init__(self, K):
        K = np.asarray(K, dtype=float)
        for row in K:
            _check_dist(row)
        self.K = K

    def probs(self, history, belief=None):
        if belief is None:
            raise DomainMismatch("belief-linear policy needs a belief")
        return np.asarray(belief) @ self.K

    def table(self, graph):
        return graph.beliefs @ self.K

    def to_dict(self):
        return {"kind": self.kind, "K": self.K.tolist()}


class HistoryTablePolicy(Policy):
    """Explicit table keyed by history tuples with an optional fallback."""

    kind = "history-table"

    def __init__(self, table, default=None):
        self.mapping = {tuple(k): _check_dist(v) for k, v in table.items()}
        self.default = None if default is None else _check_dist(default)

    def probs(self, history, belief=None):
        p = self.mapping.get(tuple(history))
        if p is None:
            if self.default is None:
                raise DomainMismatch(f"history {history} not in policy table")
            return self.default
        return p

    def to_dict(self):
        return {
            "kind": self.kind,
            "table": sorted([list(k), v.tolist()] for k, v in self.mapping.items()),
            "default": None if self.default is None else self.default.tolist(),
        }


class WindowPolicy(Policy):
    """Policy that reads only the last ``T`` observations (and actions between them)."""

    def __init__(self, T, table, default=None):
        if T < 1:
            raise ValueError("window must be at least 1")
        self.window = int(T)
        self.mapping = {tuple(k): _check_dist(v) for k, v in table.items()}
        self.default = None if default is None else _check_dist(default)

    @property
    def kind(self):
        return "memoryless" if self.window == 1 else f"truncated-memory({self.window})"

    def probs(self, history, belief=None):
        key = window(history, self.window)
        p = self.mapping.get(key)
        if p is None:
            if self.default is None:
                raise DomainMismatch(f"window {key} not in policy table")
            return self.default
        return p

    def to_dict(self):
        return {
            "kind": "window",
            "T": self.window,
            "table": sorted([list(k), v.tolist()] for k, v in self.mapping.items()),
            "default": None if self.default is None else self.default.tolist(),
        }


class MemorylessPolicy(WindowPolicy):
    """``pi(a | o_h)`` given as an (O, A) matrix."""

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        super().__init__(1, {(o,): row for o, row in enumerate(matrix)})
        self.matrix = matrix

    def table(self, graph):
        return self.matrix[graph.last_obs]


class TruncatedPolicy(Policy):
    """Evaluate ``policy`` on the last-``T`` window, treated as a history from step 1."""

    def __init__(self, policy, T, model):
        self.base = policy
        self.T = int(T)
        self.model = model
        self._cache = {}
        self.window = self.T if policy.window is None else min(self.T, policy.window)
        self.declared_L_pi = policy.declared_L_pi

    @property
    def kind(self):
        return f"truncated-memory({self.T})"

    def probs(self, history, belief=None):
        w = window(history, self.T)
        p = self._cache.get(w)
        if p is None:
            p = self.base.probs(w, belief_of_history(self.model, w))
            self._cache[w] = p
        return p

    def to_dict(self):
        return {"kind": "truncated", "T": self.T, "base": self.base.to_dict()}


def all_windows(n_obs, n_actions, T):
    """Every observation-ending window with 1..T observations."""
    out = []
    for k in range(1, T + 1):
        for obs in itertools.product(range(n_obs), repeat=k):
            for acts in itertools.product(range(n_actions), repeat=k - 1):
                w = [obs[0]]
                for a, o in zip(acts, obs[1:]):
                    w += [a, o]
                out.append(tuple(w))
    return out


def all_histories(n_obs, n_actions, depth):
    """Every observation-ending history with 1..depth observations."""
    return all_windows(n_obs, n_actions, depth)


def random_window_policy(n_obs, n_actions, T, rng, min_prob=0.0, concentration=1.0):
    """Random policy with window ``T``; each entry is at least ``min_prob``."""
    table = {}
    for w in all_windows(n_obs, n_actions, T):
        p = rng.dirichlet(np.full(n_actions, concentration))
        table[w] = min_prob + (1.0 - n_actions * min_prob) * p
    return WindowPolicy(T, table)


def random_history_policy(n_obs, n_actions, depth, rng, min_prob=0.0, concentration=1.0):
    """Random full-history policy over histories up to ``depth`` observations."""
    table = {}
    for tau in all_histories(n_obs, n_actions, depth):
        p = rng.dirichlet(np.full(n_actions, concentration))
        table[tau] = min_prob + (1.0 - n_actions * min_prob) * p
    return HistoryTablePolicy(table)


def uniform_policy(n_actions):
    return ConstantPolicy(np.full(n_actions, 1.0 / n_actions))


def policy_from_spec(spec, model, rng=None):
    """Build a policy from a JSON-style spec (used by the command line)."""
    kind = spec.get("kind", "uniform")
    A, O = model.n_actions, model.n_obs
    if kind == "uniform":
        return uniform_policy(A)
    if kind == "constant":
        return ConstantPolicy(spec["dist"])
    if kind == "belief-linear":
        if "K" in spec:
            return LinearBeliefPolicy(spec["K"])
        return LinearBeliefPolicy(rng.dirichlet(np.ones(A), size=model.n_states))
    if kind == "memoryless":
        if "matrix" in spec:
            return MemorylessPolicy(spec["matrix"])
        m = rng.dirichlet(np.ones(A), size=O)
        floor = spec.get("min_prob", 0.0)
        return MemorylessPolicy(floor + (1 - A * floor) * m)
    if kind == "window":
        return random_window_policy(O, A, spec["T"], rng, spec.get("min_prob", 0.0))
    if kind == "history":
        return random_history_policy(O, A, spec["depth"], rng, spec.get("min_prob", 0.0))
    raise ValueError(f"unknown policy kind {kind!r}")
