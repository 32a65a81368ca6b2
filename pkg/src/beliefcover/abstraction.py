"""Belief-space abstractions: epsilon covers, window truncation, abstract MDPs."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .belief import history_key, parse_history_key, window
from .errors import DanglingFrontier, DomainMismatch, SupportViolation
from .functions import HISTORY_ACTION, STATE_ACTION, FunctionTable
from .graph import BeliefGraph, enumerate_reachable
from .mdp import FiniteMDP
from .model import PREDICT_FIRST, TabularPOMDP, validate
from .policies import Policy
from .rng import substream
from .values import node_occupancy

POINT_MASS = "point-mass"
OCCUPANCY = "occupancy-weighted"
COVER_TOL = 1e-12
_CHUNK = 1 << 15


# ------------------------------------------------------------------ distances


def l1_to(B, b):
    return np.abs(B - b).sum(axis=1)


def nearest(B, centers):
    """Index of the nearest center (L1, ties to the lowest index) and the distance."""
    B = np.asarray(B, dtype=float)
    idx = np.empty(len(B), dtype=np.int64)
    dist = np.empty(len(B))
    for lo in range(0, len(B), _CHUNK):
        blk = B[lo : lo + _CHUNK]
        D = np.abs(blk[:, None, :] - centers[None, :, :]).sum(axis=-1)
        idx[lo : lo + _CHUNK] = D.argmin(axis=1)
        dist[lo : lo + _CHUNK] = D[np.arange(len(blk)), idx[lo : lo + _CHUNK]]
    return idx, dist


def _sign_vectors(d):
    # sigma and -sigma give the same spread, so fix the first sign
    return np.array([(1.0,) + s for s in itertools.product((1.0, -1.0), repeat=d - 1)])


def group_l1_diameter(X, groups, n_groups=None):
    """Largest within-group L1 distance for each group label.

    Uses ``|x - y|_1 = max_sigma sigma . (x - y)`` over sign vectors, which is
    exact and linear in the number of rows.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(groups.max()) + 1 if n_groups is None else n_groups
    d = X.shape[1]
    if d <= 12:
        proj = X @ _sign_vectors(d).T
        hi = np.full((n_groups, proj.shape[1]), -np.inf)
        lo = np.full((n_groups, proj.shape[1]), np.inf)
        np.maximum.at(hi, groups, proj)
        np.minimum.at(lo, groups, proj)
        spread = np.where(np.isfinite(hi), hi - lo, 0.0)
        return spread.max(axis=1)
    out = np.zeros(n_groups)
    order = np.argsort(groups, kind="stable")
    bounds = np.flatnonzero(np.diff(groups[order])) + 1
    for chunk in np.split(order, bounds):
        P = X[chunk]
        out[groups[chunk[0]]] = np.abs(P[:, None, :] - P[None, :, :]).sum(-1).max()
    return out


# ------------------------------------------------------------------ abstraction maps


@dataclass(eq=False)
class AbstractionMap:
    """Partition of a belief graph's nodes.

    ``representatives[x]`` is the node id standing for abstract state ``x`` and
    ``assignment[i]`` is the abstract state of node ``i``. ``radius_eps``
    bounds ``|b_i - b_rep(i)|_1`` for every node.
    """

    kind: str
    radius_eps: float
    representatives: np.ndarray
    assignment: np.ndarray
    graph: BeliefGraph = field(repr=False)
    p_family: str = POINT_MASS
    T: int | None = None
    eps: float | None = None
    off_support_windows: list = field(default_factory=list)

    @property
    def n_abstract(self):
        return len(self.representatives)

    def rep_node(self, node):
        return int(self.representatives[self.assignment[node]])

    def rep_distances(self):
        B = self.graph.beliefs
        return np.abs(B - B[self.representatives[self.assignment]]).sum(axis=1)

    def members(self, x):
        return np.flatnonzero(self.assignment == x)

    def abstract_state_of(self, history):
        return int(self.assignment[self.graph.node(history)])

    def to_dict(self):
        H = self.graph.histories
        return {
            "kind": self.kind,
            "eps": self.radius_eps,
            "representatives": [history_key(H[r]) for r in self.representatives],
            "assignment": {history_key(H[i]): history_key(H[self.representatives[x]]) for i, x in enumerate(self.assignment)},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, graph):
        reps = np.array([graph.node(parse_history_key(k)) for k in d["representatives"]], dtype=np.int64)
        pos = {int(r): x for x, r in enumerate(reps)}
        assignment = np.full(graph.n_nodes, -1, dtype=np.int64)
        for k, v in d["assignment"].items():
            assignment[graph.node(parse_history_key(k))] = pos[graph.node(parse_history_key(v))]
        if np.any(assignment < 0):
            raise DomainMismatch("abstraction does not cover every node of the graph")
        kind = d["kind"]
        T = int(kind[len("truncation(") : -1]) if kind.startswith("truncation(") else None
        return cls(kind=kind, radius_eps=float(d["eps"]), representatives=reps, assignment=assignment, graph=graph, T=T)

    @classmethod
    def from_json(cls, text, graph):
        return cls.from_dict(json.loads(text), graph)


def _beliefs_and_seed(X):
    if isinstance(X, BeliefGraph):
        ok = X.roots >= 0
        roots = X.roots[ok]
        return X.beliefs, int(roots[np.argmax(X.root_prob[ok])])
    return np.asarray(X, dtype=float), 0


class EpsilonCover(TransformerMixin, BaseEstimator):
    """Greedy farthest-point epsilon cover in L1.

    ``fit`` accepts a :class:`BeliefGraph` (seeded at the most likely first
    observation) or an ``(n, S)`` array of beliefs (seeded at row 0).
    ``transform`` returns the index of the nearest representative.

    Attributes
    ----------
    centers_ : (k, S) array
    representatives_ : (k,) int array, row indices into the fitted data
    radius_ : float, largest node-to-representative distance on the fitted data
    """

    def __init__(self, eps=0.1):
        self.eps = eps

    def fit(self, X, y=None):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        B, seed = _beliefs_and_seed(X)
        reps = [seed]
        mind = l1_to(B, B[seed])
        while True:
            j = int(np.argmax(mind))
            if mind[j] <= self.eps + COVER_TOL:
                break
            reps.append(j)
            np.minimum(mind, l1_to(B, B[j]), out=mind)
        self.representatives_ = np.array(reps, dtype=np.int64)
        self.centers_ = B[self.representatives_].copy()
        _, dist = nearest(B, self.centers_)
        self.radius_ = float(dist.max()) if len(dist) else 0.0
        return self

    def transform(self, X):
        B, _ = _beliefs_and_seed(X)
        return nearest(B, self.centers_)[0]


def build_eps_cover(graph, eps, p_family=POINT_MASS):
    cover = EpsilonCover(eps).fit(graph)
    assignment = cover.transform(graph)
    # each representative belongs to itself even when a duplicate belief precedes it
    assignment[cover.representatives_] = np.arange(len(cover.representatives_))
    return AbstractionMap(
        kind="epsilon-cover",
        radius_eps=float(eps),
        representatives=cover.representatives_,
        assignment=assignment,
        graph=graph,
        p_family=p_family,
        eps=float(eps),
    )


def window_groups(graph, T):
    """Group id per node by identical last-``T`` window, groups numbered by first member."""
    ids, keys = {}, []
    groups = np.empty(graph.n_nodes, dtype=np.int64)
    for i, h in enumerate(graph.histories):
        w = window(h, T)
        g = ids.get(w)
        if g is None:
            g = ids[w] = len(keys)
            keys.append(w)
        groups[i] = g
    return groups, keys


def build_truncation(graph, T, p_family=POINT_MASS):
    """Abstraction that keeps only the last ``T`` observations.

    The representative of a group is the window itself read as a history from
    the first step. When that history is off-support the lowest member stands
    in and the window is listed in ``off_support_windows``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    groups, keys = window_groups(graph, T)
    first = np.full(len(keys), graph.n_nodes, dtype=np.int64)
    np.minimum.at(first, groups, np.arange(graph.n_nodes))
    reps = np.empty(len(keys), dtype=np.int64)
    missing = []
    for g, w in enumerate(keys):
        node = graph.index.get(w)
        if node is None:
            missing.append(w)
            node = first[g]
        reps[g] = node
    diam = group_l1_diameter(graph.beliefs, groups, len(keys))
    return AbstractionMap(
        kind=f"truncation({T})",
        radius_eps=float(diam.max()) if len(diam) else 0.0,
        representatives=reps,
        assignment=groups,
        graph=graph,
        p_family=p_family,
        T=int(T),
        off_support_windows=missing,
    )


# ------------------------------------------------------------------ abstract MDP


@dataclass(eq=False)
class AbstractMDP(FiniteMDP):
    """Finite MDP over representatives, with the bookkeeping that produced it.

    ``frontier_bias`` bounds the value error caused by closing the enumeration
    frontier; ``closure_radius`` is the largest distance from a frontier
    successor to its nearest representative (``"nearest"`` closure only).
    """

    phi: AbstractionMap | None = field(default=None, repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    closure: str | None = "self-loop"
    closure_mass: float = 0.0
    closure_radius: float = 0.0
    frontier_bias: float = 0.0

    @property
    def r_phi(self):
        return self.r

    @property
    def P_phi(self):
        return self.P

    @property
    def d0_phi(self):
        return self.d0

    def initial_dist(self):
        return self.d0


def _node_weights(graph, phi, p_family, policy):
    w = np.zeros(graph.n_nodes)
    if p_family == POINT_MASS:
        w[phi.representatives] = 1.0
        return w
    if p_family != OCCUPANCY:
        raise ValueError(f"unknown p_family {p_family!r}")
    if policy is None:
        raise ValueError("occupancy weighting needs a policy")
    occ = node_occupancy(graph, policy.table(graph)).sum(axis=1)
    mass = np.zeros(phi.n_abstract)
    np.add.at(mass, phi.assignment, occ)
    empty = mass <= 0
    w = np.where(mass[phi.assignment] > 0, occ / np.where(mass > 0, mass, 1.0)[phi.assignment], 0.0)
    w[phi.representatives[empty]] = 1.0
    return w


def induce_abstract_mdp(graph, phi, p_family=None, policy=None, closure="self-loop"):
    """Aggregate the belief graph's MDP over ``phi``.

    ``p_family`` defaults to ``phi.p_family``. Probability mass that leaves
    the enumerated graph (frontier or pruned actions) is handled by
    ``closure``: ``"self-loop"`` keeps it on the current abstract state,
    ``"nearest"`` sends the true successor belief to its nearest
    representative, and ``None`` raises :class:`DanglingFrontier`.
    """
    model = graph.model
    p_family = p_family or phi.p_family
    X, A = phi.n_abstract, model.n_actions
    w = _node_weights(graph, phi, p_family, policy)
    live = np.flatnonzero(w > 0)
    xs = phi.assignment[live]

    R = graph.rewards()
    r = np.zeros((X, A))
    np.add.at(r, xs, w[live, None] * R[live])

    P = np.zeros((X, A, X))
    mass = w[live, None, None] * graph.obs_prob[live]
    kids = graph.child[live]
    has = kids >= 0
    li, la, lo = np.nonzero(has)
    np.add.at(P, (xs[li], la, phi.assignment[kids[li, la, lo]]), mass[li, la, lo])

    lost = (~has) & (mass > 0)
    lost_mass = float(mass[lost].sum())
    radius = 0.0
    if lost.any():
        if closure is None:
            raise DanglingFrontier(f"{int(lost.sum())} edges leave the enumerated graph")
        mi, ma, mo = np.nonzero(lost)
        if closure == "self-loop":
            np.add.at(P, (xs[mi], ma, xs[mi]), mass[mi, ma, mo])
        elif closure == "nearest":
            M = model.kernel
            U = np.einsum("ns,nst->nt", graph.beliefs[live[mi]], M[ma, mo])
            U /= U.sum(axis=1, keepdims=True)
            centers = graph.beliefs[phi.representatives]
            dest, dist = nearest(U, centers)
            radius = float(dist.max())
            np.add.at(P, (xs[mi], ma, dest), mass[mi, ma, mo])
        else:
            raise ValueError(f"unknown closure {closure!r}")

    d0 = np.zeros(X)
    ok = graph.roots >= 0
    np.add.at(d0, phi.assignment[graph.roots[ok]], graph.root_prob[ok])

    if model.horizon is None:
        bias = model.gamma**graph.max_depth * model.rmax / (1.0 - model.gamma)
    else:
        bias = 0.0 if graph.max_depth >= model.horizon else model.rmax * (model.horizon - graph.max_depth)
    return AbstractMDP(
        P=P,
        r=r,
        d0=d0,
        gamma=model.discount,
        horizon=model.horizon,
        phi=phi,
        weights=w,
        closure=closure,
        closure_mass=lost_mass,
        closure_radius=radius,
        frontier_bias=bias if (lost_mass > 0 and closure == "self-loop") else 0.0,
    )


def abstract_policy_table(policy, phi, weights=None):
    """``pi_phi(a | x)``: the policy averaged over ``p_x`` (its value at the representative by default)."""
    g = phi.graph
    if weights is None:
        return np.array([policy.probs(g.histories[r], g.beliefs[r]) for r in phi.representatives])
    pi = policy.table(g)
    out = np.zeros((phi.n_abstract, pi.shape[1]))
    np.add.at(out, phi.assignment, weights[:, None] * pi)
    return out


class LiftedPolicy(Policy):
    """``[pi_phi]_true``: act at every node as the abstract policy acts at its bin."""

    kind = "history-table"

    def __init__(self, table, phi):
        self.abstract_table = np.asarray(table, dtype=float)
        self.phi = phi
        self.window = phi.T

    def probs(self, history, belief=None):
        return self.abstract_table[self.phi.assignment[self.phi.graph.node(history)]]

    def table(self, graph):
        if graph is self.phi.graph:
            return self.abstract_table[self.phi.assignment]
        return super().table(graph)

    def to_dict(self):
        return {"kind": "lifted", "phi": self.phi.to_dict(), "table": self.abstract_table.tolist()}


def lift(f_bin, phi):
    """``[f]_true(node, a) = f(phi(node), a)``."""
    if f_bin.domain_kind != STATE_ACTION:
        raise DomainMismatch(f"cannot lift a {f_bin.domain_kind} table")
    if f_bin.values.shape[0] != phi.n_abstract:
        raise DomainMismatch("table rows do not match the abstraction")
    return FunctionTable(f_bin.values[phi.assignment], HISTORY_ACTION, bound=f_bin.bound, domain=phi.graph)


def restrict(f_nodes, phi):
    """Read a node table at the representatives."""
    if f_nodes.domain_kind != HISTORY_ACTION:
        raise DomainMismatch(f"cannot restrict a {f_nodes.domain_kind} table")
    return FunctionTable(f_nodes.values[phi.representatives], STATE_ACTION, bound=f_nodes.bound, domain=phi)


# ------------------------------------------------------------------ short-memory POMDP


def build_short_memory_pomdp(model, T, horizon=None, node_cap=None):
    """POMDP whose latent state is the last-``T`` window.

    Window ``w`` moves to ``window(w + (a, o), T)`` with probability
    ``P(o | b(w), a)`` and emits its own last observation. ``state_labels``
    holds the window tuples.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    kw = {} if node_cap is None else {"node_cap": node_cap}
    g = enumerate_reachable(model, T + 1, **kw)
    keep = np.flatnonzero(g.depth <= T)
    pos = {int(i): k for k, i in enumerate(keep)}
    n, A, O = len(keep), model.n_actions, model.n_obs
    Tr = np.zeros((n, A, n))
    for k, i in enumerate(keep):
        for a in range(A):
            for o in np.flatnonzero(g.obs_prob[i, a] > 0):
                w = window(g.histories[i] + (a, int(o)), T)
                j = g.index.get(w)
                if j is None or j not in pos:
                    raise SupportViolation(f"window {w} is reachable but off-support as a history")
                Tr[k, a, pos[j]] += g.obs_prob[i, a, o]
    E = np.zeros((n, O))
    E[np.arange(n), g.last_obs[keep]] = 1.0
    d0 = np.zeros(n)
    ok = g.roots >= 0
    d0[[pos[int(i)] for i in g.roots[ok]]] = g.root_prob[ok]
    H = horizon if horizon is not None else model.horizon
    short = TabularPOMDP(
        transition=Tr,
        emission=E,
        reward=g.rewards()[keep],
        d0=d0,
        rmax=model.rmax,
        gamma=1.0 if H is not None else model.gamma,
        horizon=H,
        order=PREDICT_FIRST,
        state_labels=tuple(g.histories[i] for i in keep),
    )
    return validate(short, tol=1e-9)


@dataclass
class IsomorphismReport:
    matched: bool
    n_states_short: int
    n_states_abstract: int
    max_transition_error: float
    max_reward_error: float
    max_initial_error: float
    one_hot: bool

    def ok(self, tol=1e-9):
        return (
            self.matched
            and self.one_hot
            and max(self.max_transition_error, self.max_reward_error, self.max_initial_error) <= tol
        )


def short_memory_isomorphism(model, T, H):
    """Compare the belief MDP of the window POMDP with the truncation-abstract MDP.

    Every belief of the window POMDP must be one-hot; its state maps to the
    abstract state of the same window. Transition rows, rewards and initial
    laws are compared along that map, and the visited abstract states must
    equal those reachable within ``H - 1`` abstract steps.
    """
    model_h = model.with_horizon(H) if model.horizon != H else model
    short = build_short_memory_pomdp(model_h, T, horizon=H)
    gs = enumerate_reachable(short, H)
    go = enumerate_reachable(model_h, H)
    phi = build_truncation(go, T)
    amdp = induce_abstract_mdp(go, phi, closure="self-loop")
    rep_pos = {int(r): x for x, r in enumerate(phi.representatives)}
    to_x = np.array([rep_pos.get(go.index.get(lbl, -1), -1) for lbl in short.state_labels])

    label = gs.beliefs.argmax(axis=1)
    one_hot = bool(np.all(np.abs(gs.beliefs.max(axis=1) - 1.0) <= 1e-12)) and bool(np.all(to_x[label] >= 0))
    xs = to_x[label]

    Rs = gs.rewards()
    p_err = r_err = 0.0
    for n in np.flatnonzero(gs.depth < H):
        r_err = max(r_err, float(np.abs(Rs[n] - amdp.r[xs[n]]).max()))
        for a in range(model.n_actions):
            row = np.zeros(phi.n_abstract)
            kids = gs.child[n, a]
            m = kids >= 0
            np.add.at(row, xs[kids[m]], gs.obs_prob[n, a, m])
            p_err = max(p_err, float(np.abs(row - amdp.P[xs[n], a]).max()))
    for n in np.flatnonzero(gs.depth == H):
        r_err = max(r_err, float(np.abs(Rs[n] - amdp.r[xs[n]]).max()))

    d0 = np.zeros(phi.n_abstract)
    ok = gs.roots >= 0
    np.add.at(d0, xs[gs.roots[ok]], gs.root_prob[ok])
    d_err = float(np.abs(d0 - amdp.d0).max())

    reach = amdp.d0 > 0
    frontier = reach.copy()
    for _ in range(H - 1):
        frontier = (frontier[:, None, None] & (amdp.P > 0)).any(axis=(0, 1)) & ~reach
        reach |= frontier
    visited = np.zeros(phi.n_abstract, dtype=bool)
    visited[xs] = True
    return IsomorphismReport(
        matched=bool(np.array_equal(visited, reach)),
        n_states_short=short.n_states,
        n_states_abstract=int(reach.sum()),
        max_transition_error=p_err,
        max_reward_error=r_err,
        max_initial_error=d_err,
        one_hot=one_hot,
    )


# ------------------------------------------------------------------ stability


@dataclass
class StabilityReport:
    """Probe suprema; every constant is a lower bound on the true one."""

    L_pi_hat: float
    L_V_hat: float | None
    L_Q_hat: float | None
    update_ratio_max: float
    T0_curve: dict
    T1_curve: dict
    T2_curve: dict
    sample_count: int
    lower_bound: bool = True


def _probe_pairs(graph, probes, rng, min_dist=1e-12):
    N = graph.n_nodes
    if N * (N - 1) // 2 <= probes:
        i, j = np.triu_indices(N, k=1)
    else:
        i = rng.integers(0, N, size=probes)
        j = rng.integers(0, N, size=probes)
    d = np.abs(graph.beliefs[i] - graph.beliefs[j]).sum(axis=1)
    keep = d > min_dist
    return i[keep], j[keep], d[keep]


def min_window_curve(graph, values, eps_grid):
    """``eps -> smallest T`` whose window groups have ``values`` diameter at most eps.

    ``None`` marks an eps no window up to the graph depth achieves.
    """
    diams = []
    for T in range(1, graph.max_depth + 1):
        groups, keys = window_groups(graph, T)
        diams.append(group_l1_diameter(values, groups, len(keys)).max())
    out = {}
    for eps in eps_grid:
        hit = [T for T, d in enumerate(diams, start=1) if d <= eps + COVER_TOL]
        out[float(eps)] = hit[0] if hit else None
    return out


def measure_stability(model, graph, policy, value_oracle=None, probes=1000, seed=0, eps_grid=(0.2, 0.1, 0.05, 0.01)):
    """Empirical stability and forgetting constants on a belief graph.

    ``value_oracle`` is an optional ``(V, Q)`` pair of node arrays (as returned
    by :func:`backward_induction`). Small graphs are probed exhaustively.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    rng = substream(seed, "probes")
    i, j, d = _probe_pairs(graph, probes, rng)
    pi = policy.table(graph)
    L_pi = float((np.abs(pi[i] - pi[j]).sum(axis=1) / d).max()) if len(d) else 0.0
    L_V = L_Q = None
    V = Q = None
    if value_oracle is not None:
        V, Q = value_oracle
        L_V = float((np.abs(V[i] - V[j]) / d).max()) if len(d) else 0.0
        if Q is not None:
            L_Q = float((np.abs(Q[i] - Q[j]).max(axis=1) / d).max()) if len(d) else 0.0

    M = model.kernel
    ratio = 0.0
    for a in range(model.n_actions):
        Ui = np.einsum("ps,ost->pot", graph.beliefs[i], M[a])
        Uj = np.einsum("ps,ost->pot", graph.beliefs[j], M[a])
        zi, zj = Ui.sum(-1), Uj.sum(-1)
        ok = (zi > 0) & (zj > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            diff = np.abs(Ui / zi[..., None] - Uj / zj[..., None]).sum(-1)
        r = np.where(ok, diff / d[:, None], 0.0)
        if r.size:
            ratio = max(ratio, float(r.max()))

    T0 = min_window_curve(graph, graph.beliefs, eps_grid)
    T1 = min_window_curve(graph, pi, eps_grid)
    T2 = min_window_curve(graph, V, eps_grid) if V is not None else {}
    return StabilityReport(
        L_pi_hat=L_pi,
        L_V_hat=L_V,
        L_Q_hat=L_Q,
        update_ratio_max=ratio,
        T0_curve=T0,
        T1_curve=T1,
        T2_curve=T2,
        sample_count=len(d),
    )


def compute_Lphi1(L_pi, L_V, Rmax, gamma=None, horizon=None):
    """Abstraction-error constant ``L_phi^[1]``.

    With ``horizon`` set, every ``1 / (1 - gamma)`` factor becomes ``H`` and the
    discount inside the second term is 1.
    """
    if horizon is not None:
        k, g = float(horizon), 1.0
    else:
        if gamma is None or not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1) without a horizon")
        k, g = 1.0 / (1.0 - gamma), gamma
    return ((L_pi + 1.0) * Rmax + 2.0 * L_V) * k + (g * Rmax * L_pi + Rmax) * k * k


def policy_abstraction_bound(L_pi, Rmax, gamma, eps):
    """Value gap from acting with the abstracted policy instead of ``pi``."""
    return Rmax * L_pi * eps / (1.0 - gamma) + gamma * Rmax * L_pi * eps / (1.0 - gamma) ** 2
