"""Memory-based future-dependent value functions and the min-max estimator.

Key conventions
---------------
* ``traj`` is the flat tuple ``(o1, a1, ..., oH, aH)``.
* ``tau_h`` is the action-boundary history before ``o_h``: ``traj[:2(h-1)]``.
* A value table is keyed ``(h, tau_h, future)`` with ``future = traj[2(h-1):]``
  and a critic table is keyed ``(h, tau_h)``. Truncation replaces ``tau_h``
  by its last-``T`` window and keeps ``h``.
* ``V(f_{H+1}) = 0``.
"""

from __future__ import annotations

import itertools
from collections import defaultdict

import numpy as np
from sklearn.base import BaseEstimator

from .belief import belief_of_history, window
from .double_sampling import EstimateResult, argmin_lowest
from .errors import DomainMismatch, SupportViolation
from .functions import FUTURE_PAIR, HISTORY, FunctionClass, FunctionTable
from .graph import enumerate_reachable
from .model import PREDICT_FIRST
from .oracles import joint_trajectories

# ------------------------------------------------------------------ keys


def _seqs(n_obs, n_actions, pairs):
    """All flat (o, a) sequences with ``pairs`` pairs."""
    out = []
    for combo in itertools.product(itertools.product(range(n_obs), range(n_actions)), repeat=pairs):
        out.append(tuple(x for pair in combo for x in pair))
    return out


def value_keys(n_obs, n_actions, H):
    return [
        (h, tau, fut)
        for h in range(1, H + 1)
        for tau in _seqs(n_obs, n_actions, h - 1)
        for fut in _seqs(n_obs, n_actions, H - h + 1)
    ]


def critic_keys(n_obs, n_actions, H):
    return [(h, tau) for h in range(1, H + 1) for tau in _seqs(n_obs, n_actions, h - 1)]


def _trunc(tau, T):
    return tuple(tau) if T is None else window(tau, T)


def v_key(traj, h, T=None):
    cut = 2 * (h - 1)
    return (h, _trunc(traj[:cut], T), tuple(traj[cut:]))


def theta_key(traj, h, T=None):
    return (h, _trunc(traj[: 2 * (h - 1)], T))


def truncate_table(table, T, tol=0.0):
    """Re-key a table by last-``T`` windows.

    Every group of keys that collapse together must carry values within
    ``tol`` of each other; the first key's value is kept.
    """
    if table.domain_kind not in (FUTURE_PAIR, HISTORY):
        raise DomainMismatch(f"cannot truncate a {table.domain_kind} table")
    first, vals = {}, []
    for k, v in zip(table.keys, table.values):
        tk = (k[0], window(k[1], T)) + tuple(k[2:])
        j = first.get(tk)
        if j is None:
            first[tk] = len(vals)
            vals.append(v)
        elif abs(vals[j] - v) > tol:
            raise ValueError(f"table is not a window-{T} function at {k}")
    return FunctionTable(np.array(vals), table.domain_kind, bound=table.bound, keys=list(first))


def expand_table(values_by_window, keys, T, kind):
    """Full-key table whose value at each key is read from its window."""
    vals = np.array([values_by_window[(k[0], window(k[1], T)) + tuple(k[2:])] for k in keys])
    return FunctionTable(vals, kind, keys=keys)


# ------------------------------------------------------------------ importance ratio


class ImportanceRatio:
    """``mu(a, tau+) = pi_e(a | tau+) / pi_b(a | tau+)``, both read at window ``T``."""

    def __init__(self, pi_e, pi_b, T=None, model=None):
        self.pi_e, self.pi_b, self.T, self.model = pi_e, pi_b, T, model
        self._cache = {}

    def with_window(self, T):
        return ImportanceRatio(self.pi_e, self.pi_b, T, self.model)

    def _probs(self, pi, hist):
        b = None
        if pi.kind == "belief-linear":
            b = belief_of_history(self.model, hist)
        return pi.probs(hist, b)

    def row(self, tau_plus):
        key = _trunc(tau_plus, self.T)
        out = self._cache.get(key)
        if out is None:
            pe, pb = self._probs(self.pi_e, key), self._probs(self.pi_b, key)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(pb > 0, pe / np.where(pb > 0, pb, 1.0), np.where(pe > 0, np.inf, 0.0))
            self._cache[key] = out
        return out

    def __call__(self, a, tau_plus):
        v = self.row(tau_plus)[a]
        if not np.isfinite(v):
            raise SupportViolation(f"pi_b gives zero probability to action {a} after {tau_plus}")
        return float(v)

    def C_mu(self, graph):
        return float(max(self.row(h).max() for h in graph.histories))


# ------------------------------------------------------------------ dataset evaluation


class _Batch:
    """D2 trajectories collapsed to unique action-observation sequences."""

    def __init__(self, ds):
        n, H = ds.obs.shape
        flat = np.empty((n, 2 * H), dtype=np.int64)
        flat[:, 0::2] = ds.obs
        flat[:, 1::2] = ds.acts
        u, inv, cnt = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        self.n, self.H = n, H
        self.trajs = [tuple(int(x) for x in row) for row in u]
        self.counts = cnt.astype(float)
        self.rsum = np.zeros((len(u), H))
        np.add.at(self.rsum, inv.ravel(), ds.rews)
        self._idx = {}

    def index(self, table, kind, T):
        key = (id(table.keys), kind, T)
        hit = self._idx.get(key)
        if hit is not None and hit[0] is table.keys:
            return hit[1]
        pos = table.index
        H = self.H
        shape = (len(self.trajs), H)
        try:
            if kind == "v":
                idx = np.array([[pos[v_key(t, h, T)] for h in range(1, H + 1)] for t in self.trajs]).reshape(shape)
            else:
                idx = np.array([[pos[theta_key(t, h, T)] for h in range(1, H + 1)] for t in self.trajs]).reshape(shape)
        except KeyError as exc:
            raise DomainMismatch(f"key {exc.args[0]} missing from a function table") from None
        self._idx[key] = (table.keys, idx)
        return idx

    def mu(self, ratio):
        H = self.H
        out = np.empty((len(self.trajs), H))
        for g, t in enumerate(self.trajs):
            for h in range(1, H + 1):
                out[g, h - 1] = ratio(t[2 * h - 1], t[: 2 * h - 1])
        return out


def _batch(ds):
    b = ds.__dict__.get("_fdvf_batch")
    if b is None:
        b = ds.__dict__["_fdvf_batch"] = _Batch(ds)
    return b


def _residual_parts(V, batch, mu, T):
    """Per-group ``(sum of X, count)`` pieces: returns ``A = mu*(rsum + c*Vnext) - c*Vcur``."""
    idx = batch.index(V, "v", T)
    cur = V.values[idx]
    nxt = np.zeros_like(cur)
    nxt[:, :-1] = cur[:, 1:]
    c = batch.counts[:, None]
    return mu * (batch.rsum + c * nxt) - c * cur


def _objective(Xsum, th, counts, w, n):
    per = Xsum * th - 0.5 * counts[:, None] * th**2
    if w is not None:
        per = per * w[:, None]
    return float(per.sum() / n)


def fdvf_inner(V, theta, ds, mu, T=None, w=None):
    """Empirical ``sum_h E_D[X_h theta(tau_h) - theta(tau_h)^2 / 2]``.

    ``X_h = mu(a_h, tau_h+) (r_h + V(f_{h+1})) - V(f_h)``. ``w`` holds
    optional per-trajectory weights aligned with ``ds``.
    """
    batch = _batch(ds)
    ratio = mu.with_window(T) if T is not None else mu
    m = batch.mu(ratio)
    Xs = _residual_parts(V, batch, m, T)
    th = theta.values[batch.index(theta, "theta", T)]
    return _objective(Xs, th, batch.counts, _group_weights(batch, ds, w), batch.n)


def _group_weights(batch, ds, w):
    if w is None:
        return None
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return np.full(len(batch.trajs), float(w))
    if len(w) == len(batch.trajs):
        return w
    # per-trajectory weights are functions of the trajectory, so any member represents its group
    flat = np.empty((len(ds), 2 * batch.H), dtype=np.int64)
    flat[:, 0::2], flat[:, 1::2] = ds.obs, ds.acts
    pos = {t: g for g, t in enumerate(batch.trajs)}
    out = np.zeros(len(batch.trajs))
    for i, row in enumerate(flat):
        out[pos[tuple(int(x) for x in row)]] = w[i]
    return out


def fdvf_fit(Vclass, Theta, ds, mu, truncation_T=None, w_phi=None):
    """Exhaustive min-max: ``argmin_V max_theta`` of :func:`fdvf_inner`.

    With ``truncation_T`` both classes are re-keyed by windows (they must be
    window functions) and ``mu`` reads the policies at windows.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    T = truncation_T
    if T is not None:
        Vclass = FunctionClass([truncate_table(v, T) for v in Vclass])
        Theta = FunctionClass([truncate_table(t, T) for t in Theta])
        mu = mu.with_window(T)
    batch = _batch(ds)
    m = batch.mu(mu)
    w = _group_weights(batch, ds, w_phi)
    thetas = [t.values[batch.index(t, "theta", T)] for t in Theta]
    inner, best = [], []
    for V in Vclass:
        Xs = _residual_parts(V, batch, m, T)
        vals = [_objective(Xs, th, batch.counts, w, batch.n) for th in thetas]
        j = int(np.argmax(vals))
        inner.append(vals[j])
        best.append(j)
    k = argmin_lowest(inner)
    J = fdvf_estimate(Vclass[k], ds, T=T)
    return EstimateResult(
        J_hat=J,
        chosen_index=k,
        empirical_loss=inner[k],
        n_used=len(ds),
        mode="fdvf" if T is None else f"fdvf-truncated({T})",
        losses=inner,
        diagnostics={"best_theta": best},
    )


def fdvf_estimate(V, ds=None, T=None, model=None, pi_b=None):
    """``E_{pi_b}[V(f_1)]`` from a dataset, or exactly by enumeration given ``model`` and ``pi_b``."""
    if ds is not None:
        batch = _batch(ds)
        idx = batch.index(V, "v", T)
        return float((batch.counts * V.values[idx[:, 0]]).sum() / batch.n)
    H = model.horizon
    g = enumerate_reachable(model, H)
    pib = pi_b.table(g)
    total = 0.0
    for root in g.roots[g.roots >= 0]:
        p0 = g.root_prob[g.last_obs[root]]
        for seq, p in _continuations(g, pib, root, 1, H):
            total += p0 * p * V.get((1, (), (int(g.last_obs[root]),) + seq))
    return total


# ------------------------------------------------------------------ exact operators


def _continuations(g, pi_tab, node, k, H, first=None):
    """``(a_k, o_{k+1}, ..., a_H)`` sequences from ``node`` with their probabilities."""
    p = pi_tab[node] if first is None else first
    for a in np.flatnonzero(p > 0):
        a = int(a)
        if k == H:
            yield (a,), float(p[a])
            continue
        for o in np.flatnonzero(g.obs_prob[node, a] > 0):
            c = g.child[node, a, o]
            if c < 0:
                continue
            q = float(p[a] * g.obs_prob[node, a, o])
            for seq, r in _continuations(g, pi_tab, c, k + 1, H):
                yield (a, int(o)) + seq, q * r


class ResidualOracle:
    """Exact ``(B^H V)(tau_h)`` by enumeration over the belief graph."""

    def __init__(self, model, pi_e, pi_b, graph=None):
        if model.horizon is None:
            raise ValueError("the memory-based residual needs a finite horizon")
        self.model, self.H = model, model.horizon
        self.g = graph if graph is not None else enumerate_reachable(model, self.H)
        self.pie = pi_e.table(self.g)
        self.pib = pi_b.table(self.g)
        self.R = self.g.rewards()

    def _obs_children(self, tau):
        """``(P(o_h | tau_h), node of tau_h + (o_h,))`` pairs."""
        g = self.g
        if len(tau) == 0:
            return [(float(g.root_prob[o]), int(g.roots[o])) for o in range(len(g.roots)) if g.roots[o] >= 0]
        parent = g.node(tau[:-1])
        a = tau[-1]
        kids = g.child[parent, a]
        return [(float(g.obs_prob[parent, a, o]), int(kids[o])) for o in np.flatnonzero(kids >= 0)]

    def expect_v(self, V, node, h, memo):
        """``E_{pi_b}[V(f_h) | tau_h+ = history(node)]``."""
        hit = memo.get(node)
        if hit is not None:
            return hit
        hist = self.g.histories[node]
        tau, o = hist[:-1], hist[-1]
        val = sum(p * V.get((h, tau, (o,) + seq)) for seq, p in _continuations(self.g, self.pib, node, h, self.H))
        memo[node] = val
        return val

    def residual(self, V, tau, memo=None):
        memo = {} if memo is None else memo
        h = len(tau) // 2 + 1
        g = self.g
        first = second = 0.0
        for p, node in self._obs_children(tau):
            second += p * self.expect_v(V, node, h, memo)
            for a in np.flatnonzero(self.pie[node] > 0):
                q = self.pie[node, a]
                cont = self.R[node, a]
                if h < self.H:
                    for o2 in np.flatnonzero(g.child[node, a] >= 0):
                        c = g.child[node, a, o2]
                        cont += g.obs_prob[node, a, o2] * self.expect_v(V, int(c), h + 1, memo)
                first += p * q * cont
        return float(first - second)

    def on_support(self, tau):
        return len(tau) == 0 or tuple(tau[:-1]) in self.g.index


def bellman_residual_H(model, pi_e, pi_b, V, tau, oracle=None):
    """``(B^H V)(tau_h)`` for an action-boundary history ``tau``."""
    oracle = oracle or ResidualOracle(model, pi_e, pi_b)
    if not oracle.on_support(tau):
        raise DomainMismatch(f"history {tau} is off-support")
    return oracle.residual(V, tuple(tau))


def theta_from_V(V, oracle, keys, T=None):
    """Critic table ``B^H V`` (0 off-support).

    With ``T`` the residual is evaluated once per window (at the first
    history carrying it) and shared, which makes the table a window function.
    """
    memo, by_key = {}, {}
    vals = []
    for h, tau in keys:
        wk = (h, _trunc(tau, T))
        if wk not in by_key:
            by_key[wk] = oracle.residual(V, tau, memo) if oracle.on_support(tau) else 0.0
        vals.append(by_key[wk])
    return FunctionTable(np.array(vals), HISTORY, keys=keys)


def critic_class(Vclass, oracle, keys, T=None):
    """``{B^H V : V in Vclass}`` followed by the zero critic."""
    members = [theta_from_V(V, oracle, keys, T) for V in Vclass]
    members.append(FunctionTable(np.zeros(len(keys)), HISTORY, keys=keys))
    return FunctionClass(members)


def latent_values(model, pi_e):
    """``V^{pi_e}(s, tau_h)`` for every action-boundary history, as a dict of vectors."""
    H, S, A, O = model.horizon, model.n_states, model.n_actions, model.n_obs
    out = {}

    def rec(h, tau):
        if h > H:
            return np.zeros(S)
        if (h, tau) in out:
            return out[(h, tau)]
        v = np.zeros(S)
        for o in range(O):
            hist = tau + (o,)
            pa = pi_e.probs(hist, None)
            for a in range(A):
                if pa[a] == 0:
                    continue
                nxt = rec(h + 1, hist + (a,))
                v += model.emission[:, o] * pa[a] * (model.reward[:, a] + model.transition[:, a] @ nxt)
        out[(h, tau)] = v
        return v

    rec(1, ())
    return out


def solve_fdvf(model, pi_e, keys=None, tol=1e-9):
    """A future-dependent value function depending on ``(tau_h, o_h)`` only.

    Solves ``sum_o Omega(o | s) g(tau_h, o) = V^{pi_e}(s, tau_h)`` per history
    by least squares and checks the residual, so it needs an emission matrix
    of full row rank and observations emitted by the current state.

    Returns ``(table, max_residual)``.
    """
    if model.order != PREDICT_FIRST:
        raise ValueError("the construction assumes the current state emits the current observation")
    H = model.horizon
    keys = keys or value_keys(model.n_obs, model.n_actions, H)
    Vs = latent_values(model, pi_e)
    g, worst = {}, 0.0
    E = model.emission
    for (h, tau), target in Vs.items():
        sol = np.linalg.lstsq(E, target, rcond=None)[0]
        worst = max(worst, float(np.abs(E @ sol - target).max()))
        g[(h, tau)] = sol
    if worst > tol:
        raise ValueError(f"no exact solution: residual {worst:.3g}")
    vals = np.array([g[(h, tau)][fut[0]] for h, tau, fut in keys])
    return FunctionTable(vals, FUTURE_PAIR, keys=keys), worst


def perturb_value(V, scale, rng, T=None):
    """``V + scale * u`` with ``u`` uniform on [-1, 1], drawn per window when ``T`` is set."""
    draws = {}
    vals = np.empty_like(V.values)
    for i, (h, tau, fut) in enumerate(V.keys):
        k = (h, _trunc(tau, T), fut)
        if k not in draws:
            draws[k] = rng.uniform(-1.0, 1.0)
        vals[i] = V.values[i] + scale * draws[k]
    return FunctionTable(vals, FUTURE_PAIR, keys=V.keys)


# ------------------------------------------------------------------ population oracles


def _step_X(traj_states, obs, acts, V, mu, model, H):
    """``X_h`` for one enumerated latent trajectory."""
    flat = tuple(x for pair in zip(obs, acts) for x in pair)
    X = np.empty(H)
    for h in range(1, H + 1):
        s = traj_states[h - 1]
        a = acts[h - 1]
        r = model.reward[s, a]
        nxt = V.get(v_key(flat, h + 1)) if h < H else 0.0
        X[h - 1] = mu(a, flat[: 2 * h - 1]) * (r + nxt) - V.get(v_key(flat, h))
    return flat, X


def population_inner_max(V, model, pi_b, mu):
    """``max_theta`` of the population objective over all tabular critics.

    Enumerates latent trajectories under ``pi_b``, forms ``theta*(tau_h) =
    E[X_h | tau_h]`` and evaluates the objective at ``theta*``.
    """
    H = model.horizon
    paths = joint_trajectories(model, lambda h, tau: pi_b.probs(tau, None), H)
    rows = [(p, *_step_X(states, obs, acts, V, mu, model, H)) for states, obs, acts, p in paths]
    num, den = defaultdict(float), defaultdict(float)
    for p, flat, X in rows:
        for h in range(1, H + 1):
            k = theta_key(flat, h)
            num[k] += p * X[h - 1]
            den[k] += p
    star = {k: num[k] / den[k] for k in num}
    total = 0.0
    for p, flat, X in rows:
        for h in range(1, H + 1):
            th = star[theta_key(flat, h)]
            total += p * (X[h - 1] * th - 0.5 * th * th)
    return total


def residual_energy(V, oracle, pi_policy=None):
    """``sum_h E[(B^H V)(tau_h)^2]`` with ``tau_h`` drawn from ``pi_policy`` (``pi_b`` by default)."""
    g, H = oracle.g, oracle.H
    pi = oracle.pib if pi_policy is None else pi_policy.table(g)
    reach = g.reach_probs(pi)
    memo, total = {}, 0.0
    total += oracle.residual(V, (), memo) ** 2
    for node in np.flatnonzero(g.depth < H):
        for a in range(g.model.n_actions):
            w = reach[node] * pi[node, a]
            if w > 0:
                total += w * oracle.residual(V, g.histories[node] + (a,), memo) ** 2
    return total


def residual_ratio(Vclass, model, pi_e, pi_b, mu):
    """``max_h sup_V sqrt(E_{pi_e}[(B^S V)^2] / E_{pi_b}[(B^H V)^2])``.

    ``B^S`` conditions on the latent state as well as the history. Pairs
    with a zero numerator are skipped; a positive numerator over a zero
    denominator gives infinity.
    """
    H = model.horizon
    pe_paths = joint_trajectories(model, lambda h, tau: pi_e.probs(tau, None), H)
    pb_paths = joint_trajectories(model, lambda h, tau: pi_b.probs(tau, None), H)
    worst = 0.0
    for V in Vclass:
        for h in range(1, H + 1):
            sn, sd = defaultdict(float), defaultdict(float)
            hn, hd = defaultdict(float), defaultdict(float)
            for states, obs, acts, p in pb_paths:
                flat, X = _step_X(states, obs, acts, V, mu, model, H)
                ks = (states[h - 1], flat[: 2 * (h - 1)])
                sn[ks] += p * X[h - 1]
                sd[ks] += p
                kh = flat[: 2 * (h - 1)]
                hn[kh] += p * X[h - 1]
                hd[kh] += p
            den = sum(hd[k] * (hn[k] / hd[k]) ** 2 for k in hd)
            # latent-conditional residual weighted by the target policy's law of (s_h, tau_h)
            law = defaultdict(float)
            for states, obs, acts, p in pe_paths:
                flat = tuple(x for pair in zip(obs, acts) for x in pair)
                law[(states[h - 1], flat[: 2 * (h - 1)])] += p
            num = 0.0
            for k, q in law.items():
                if sd.get(k, 0.0) > 0:
                    num += q * (sn[k] / sd[k]) ** 2
                elif q > 0:
                    return float("inf")
            if num <= 1e-20:
                continue
            if den <= 1e-20:
                return float("inf")
            worst = max(worst, float(np.sqrt(num / den)))
    return worst


# ------------------------------------------------------------------ importance weight


def importance_weight_wphiT(model, short_model, pi_b, pi_b_truncated, trajectory, T=None):
    """Ratio between the truncated and the true data-generating law of a trajectory.

    Product over steps of ``pi_b^T(a_h) / pi_b(a_h)`` and, from the second
    step, ``P^T(o_h | tau_h) / P(o_h | tau_h)``. ``P^T`` is read from the
    short-memory model (its states are windows); without one it predicts from
    the belief of the last-``T`` window.
    """
    traj = tuple(int(x) for x in trajectory)
    H = len(traj) // 2
    if short_model is not None:
        labels = {lab: k for k, lab in enumerate(short_model.state_labels)}
        T = max(len(lab) for lab in labels) // 2 + 1
    elif T is None:
        raise ValueError("pass a short-memory model or a window length")
    w = 1.0
    for h in range(1, H + 1):
        hist = traj[: 2 * h - 1]
        a = traj[2 * h - 1]
        pb = pi_b.probs(hist, None)[a]
        if pb <= 0:
            raise SupportViolation(f"pi_b(a={a} | {hist}) = 0")
        w *= pi_b_truncated.probs(hist, None)[a] / pb
        if h == H:
            break
        o = traj[2 * h]
        p = float(belief_of_history(model, hist) @ model.kernel[a, o].sum(axis=1))
        if p <= 0:
            raise SupportViolation(f"P(o={o} | {hist}, a={a}) = 0")
        if short_model is not None:
            k = labels[window(hist, T)]
            pt = float(short_model.transition[k, a] @ short_model.emission[:, o])
        else:
            pt = float(belief_of_history(model, window(hist, T)) @ model.kernel[a, o].sum(axis=1))
        w *= pt / p
    return w


class MinMaxFDVF(BaseEstimator):
    """Estimator wrapper around :func:`fdvf_fit`."""

    def __init__(self, value_class=None, critic_class=None, ratio=None, truncation_T=None):
        self.value_class = value_class
        self.critic_class = critic_class
        self.ratio = ratio
        self.truncation_T = truncation_T

    def fit(self, X, y=None, w_phi=None):
        self.result_ = fdvf_fit(self.value_class, self.critic_class, X, self.ratio, self.truncation_T, w_phi)
        self.J_hat_ = self.result_.J_hat
        self.chosen_index_ = self.result_.chosen_index
        return self
