"""Double-sampling Bellman-error minimization over a finite function class."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .abstraction import abstract_policy_table, induce_abstract_mdp
from .data import GEOMETRIC, prefix_law
from .errors import DomainMismatch
from .functions import HISTORY_ACTION, STATE_ACTION
from .policies import Policy

TRUE = "true-space"
ABSTRACT = "abstract"


@dataclass
class EstimateResult:
    J_hat: float
    chosen_index: int
    empirical_loss: float
    n_used: int
    mode: str
    losses: list = field(default_factory=list)
    diagnostics: dict | None = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def argmin_lowest(values):
    """Index of the minimum; ``np.argmin`` already returns the first of ties."""
    return int(np.argmin(np.asarray(values, dtype=float)))


# ------------------------------------------------------------------ plumbing


def d1_nodes(ds, graph):
    """Node ids of each record's prefix and both successors (cached on the dataset)."""
    cache = ds.__dict__.setdefault("_node_cache", {})
    key = id(graph)
    if key not in cache:
        x = graph.nodes_of(ds.prefix) if len(ds) else np.zeros(0, dtype=np.int64)
        yA = graph.child[x, ds.a, ds.oA]
        yB = graph.child[x, ds.a, ds.oB]
        if np.any(yA < 0) or np.any(yB < 0):
            raise DomainMismatch("a successor history lies outside the belief graph")
        cache[key] = (graph, x, yA, yB)
    return cache[key][1:]


def _node_policy(pi, graph):
    return pi.table(graph) if isinstance(pi, Policy) else np.asarray(pi, dtype=float)


def _abstract_policy(pi, phi):
    return abstract_policy_table(pi, phi) if isinstance(pi, Policy) else np.asarray(pi, dtype=float)


def _check_domain(f, kind, rows):
    if f.domain_kind != kind or f.values.shape[0] != rows:
        raise DomainMismatch(f"expected a {kind} table with {rows} rows, got {f.domain_kind} {f.values.shape}")


class _Setup:
    """Everything ds_loss needs besides ``f``, computed once per (dataset, mode)."""

    def __init__(self, pi, ds, graph, mode, phi, amdp, gamma):
        self.mode = mode
        self.gamma = graph.model.discount if gamma is None else gamma
        x, yA, yB = d1_nodes(ds, graph)
        self.a = ds.a
        if mode == TRUE:
            self.rows = graph.n_nodes
            self.kind = HISTORY_ACTION
            self.pi = _node_policy(pi, graph)
            self.x, self.yA, self.yB = x, yA, yB
            self.rA, self.rB = ds.rA, ds.rB
        elif mode == ABSTRACT:
            if phi is None:
                raise ValueError("abstract mode needs an abstraction")
            if amdp is None:
                amdp = induce_abstract_mdp(graph, phi, closure="nearest")
            self.rows = phi.n_abstract
            self.kind = STATE_ACTION
            self.pi = _abstract_policy(pi, phi)
            asg = phi.assignment
            self.x, self.yA, self.yB = asg[x], asg[yA], asg[yB]
            self.rA = self.rB = amdp.r[self.x, self.a]
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def products(self, f):
        _check_domain(f, self.kind, self.rows)
        Q = f.values
        v = (self.pi * Q).sum(axis=1)
        q = Q[self.x, self.a]
        YA = q - (self.rA + self.gamma * v[self.yA])
        YB = q - (self.rB + self.gamma * v[self.yB])
        return YA * YB


def ds_loss(f, pi, ds, graph, mode=ABSTRACT, phi=None, amdp=None, gamma=None):
    """Empirical double-sampling loss ``mean(Y_A * Y_B)``.

    ``Y_X = f(x, a) - (r_X + gamma * f(y_X, pi))`` where ``y_X`` is successor
    ``X``. In abstract mode states are mapped through ``phi``, the policy is
    ``pi_phi`` and the reward is the abstract reward ``r_phi(x, a)``.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    return float(_Setup(pi, ds, graph, mode, phi, amdp, gamma).products(f).mean())


def ds_fit(F, pi, ds, graph, mode=ABSTRACT, phi=None, amdp=None, gamma=None):
    """Exhaustive argmin of the loss over ``F`` (ties go to the lower index)."""
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    setup = _Setup(pi, ds, graph, mode, phi, amdp, gamma)
    losses = [float(setup.products(f).mean()) for f in F]
    k = argmin_lowest(losses)
    J = estimate_J(F[k], pi, graph, mode=mode, phi=phi)
    return EstimateResult(J_hat=J, chosen_index=k, empirical_loss=losses[k], n_used=len(ds), mode=mode, losses=losses)


def estimate_J(f, pi, graph, mode=ABSTRACT, phi=None):
    """``E_{o1}[f(b1, pi)]``, reading ``f`` at ``phi(b1)`` in abstract mode."""
    ok = graph.roots >= 0
    roots, p = graph.roots[ok], graph.root_prob[ok]
    if mode == TRUE:
        _check_domain(f, HISTORY_ACTION, graph.n_nodes)
        v = (_node_policy(pi, graph) * f.values).sum(axis=1)
        return float(p @ v[roots])
    _check_domain(f, STATE_ACTION, phi.n_abstract)
    v = (_abstract_policy(pi, phi) * f.values).sum(axis=1)
    return float(p @ v[phi.assignment[roots]])


# ------------------------------------------------------------------ exact quantities


def data_distribution(graph, pi_b, prefix_dist=GEOMETRIC, max_depth=None):
    """Exact law of ``(prefix node, action)`` in a D1 dataset, shape (N, A)."""
    model = graph.model
    max_depth = graph.max_depth - 1 if max_depth is None else max_depth
    pi = _node_policy(pi_b, graph)
    reach = graph.reach_probs(pi)
    ph = np.zeros(graph.max_depth + 1)
    ph[1 : max_depth + 1] = prefix_law(model, prefix_dist, max_depth)
    return (ph[graph.depth] * reach)[:, None] * pi


def aggregate_rows(d_nodes, phi):
    out = np.zeros((phi.n_abstract, d_nodes.shape[1]))
    np.add.at(out, phi.assignment, d_nodes)
    return out


def conditional_residual(f, pi, graph, mode=ABSTRACT, phi=None, amdp=None, gamma=None):
    """``E[Y | node, a]`` for every node, using exact one-step expectations."""
    gamma = graph.model.discount if gamma is None else gamma
    kids = graph.child
    if mode == TRUE:
        _check_domain(f, HISTORY_ACTION, graph.n_nodes)
        v = (_node_policy(pi, graph) * f.values).sum(axis=1)
        cont = np.where(kids >= 0, v[np.maximum(kids, 0)], 0.0)
        return f.values - graph.rewards() - gamma * (graph.obs_prob * cont).sum(axis=-1)
    _check_domain(f, STATE_ACTION, phi.n_abstract)
    if amdp is None:
        amdp = induce_abstract_mdp(graph, phi, closure="nearest")
    v = (_abstract_policy(pi, phi) * f.values).sum(axis=1)
    cont = np.where(kids >= 0, v[phi.assignment[np.maximum(kids, 0)]], 0.0)
    xs = phi.assignment
    return f.values[xs] - amdp.r[xs] - gamma * (graph.obs_prob * cont).sum(axis=-1)


def population_ds_loss(f, pi, graph, d_nodes, mode=ABSTRACT, phi=None, amdp=None, gamma=None):
    """Exact ``E[Y_A Y_B]`` for independent-redraw data.

    Given the prefix and action the two factors are independent, so the
    expectation is ``sum d(node, a) * E[Y | node, a]^2``. Nodes whose edges
    leave the graph must carry no data mass.
    """
    m = conditional_residual(f, pi, graph, mode, phi, amdp, gamma)
    live = d_nodes > 0
    leaks = (graph.child < 0) & (graph.obs_prob > 0)
    if np.any(live & leaks.any(axis=-1)):
        raise DomainMismatch("data mass sits on nodes whose successors are not enumerated")
    return float((d_nodes * m**2).sum())


def bellman_error(f, pi_phi, amdp, d_abs):
    """``E_{d}[(f - T^{pi_phi} f)^2]`` on the abstract MDP."""
    Tf = amdp.bellman(f.values, pi_phi)
    return float((d_abs * (f.values - Tf) ** 2).sum())


def abstract_coverage(amdp, pi_phi, d_abs):
    """``max d^{pi_phi}(x, a) / d^D(x, a)``; 0/0 is skipped, x/0 gives infinity."""
    d = amdp.occupancy(pi_phi)
    pos = d > 0
    if np.any(pos & (d_abs <= 0)):
        return float("inf")
    return float((d[pos] / d_abs[pos]).max())


class DoubleSamplingEstimator(BaseEstimator):
    """Estimator wrapper around :func:`ds_fit`.

    Parameters
    ----------
    function_class : FunctionClass
    policy : Policy or array
        Target policy (node table in true mode, abstract table in abstract mode).
    graph : BeliefGraph
    mode : {"abstract", "true-space"}
    phi : AbstractionMap, optional
    """

    def __init__(self, function_class=None, policy=None, graph=None, mode=ABSTRACT, phi=None):
        self.function_class = function_class
        self.policy = policy
        self.graph = graph
        self.mode = mode
        self.phi = phi

    def fit(self, X, y=None):
        self.result_ = ds_fit(self.function_class, self.policy, X, self.graph, mode=self.mode, phi=self.phi)
        self.J_hat_ = self.result_.J_hat
        self.chosen_index_ = self.result_.chosen_index
        self.losses_ = np.asarray(self.result_.losses)
        return self

    def score(self, X, y=None):
        """Negative loss of the selected member on ``X``."""
        f = self.function_class[self.chosen_index_]
        return -ds_loss(f, self.policy, X, self.graph, mode=self.mode, phi=self.phi)
