"""Offline datasets: double-sampled transitions (D1) and full trajectories (D2)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HashMismatch, SchemaMismatch, SupportViolation
from .graph import enumerate_reachable
from .model import PREDICT_FIRST
from .rng import categorical, substream

GENERATOR_VERSION = "1"
INDEPENDENT = "independent-redraw"
SHARED = "shared-reward"
GEOMETRIC = "geometric"
UNIFORM = "uniform"


@dataclass(eq=False)
class D1Dataset:
    """Prefix, action and two successor draws per record.

    ``prefix[i]`` is the observation-ending history ``tau_h``; successor
    ``X`` is the history ``prefix[i] + (a[i], oX[i])``.
    """

    h: np.ndarray
    prefix: list
    a: np.ndarray
    rA: np.ndarray
    oA: np.ndarray
    rB: np.ndarray
    oB: np.ndarray
    mode: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.a)

    def next_A(self, i):
        return self.prefix[i] + (int(self.a[i]), int(self.oA[i]))

    def next_B(self, i):
        return self.prefix[i] + (int(self.a[i]), int(self.oB[i]))

    def records(self):
        for i in range(len(self)):
            yield {
                "h": int(self.h[i]),
                "prefix": list(self.prefix[i]),
                "a": int(self.a[i]),
                "rA": float(self.rA[i]),
                "oA": int(self.oA[i]),
                "rB": float(self.rB[i]),
                "oB": int(self.oB[i]),
                "mode": self.mode,
            }


@dataclass(eq=False)
class D2Dataset:
    """``n`` trajectories of length ``H``: arrays ``obs``, ``acts``, ``rews`` of shape (n, H)."""

    obs: np.ndarray
    acts: np.ndarray
    rews: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.obs.shape[0]

    @property
    def horizon(self):
        return self.obs.shape[1]

    def history(self, i, h):
        """``tau_h^+`` of trajectory ``i`` (``h`` observations)."""
        out = [int(self.obs[i, 0])]
        for k in range(1, h):
            out += [int(self.acts[i, k - 1]), int(self.obs[i, k])]
        return tuple(out)

    def records(self):
        for i in range(len(self)):
            yield {
                "steps": [[int(o), int(a), float(r)] for o, a, r in zip(self.obs[i], self.acts[i], self.rews[i])]
            }


def _check_support(pi, nodes):
    p = pi[nodes]
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9) or np.any(p < 0):
        raise SupportViolation("behavior policy returned an invalid action distribution")


def _simulate(model, graph, pi, n, steps, rng):
    """Run ``n`` latent rollouts for ``max(steps)`` observations.

    Returns node ids, latent states, actions and rewards per step; rollout
    ``i`` stops after ``steps[i]`` observations (entries past it are -1/0).
    """
    S = model.n_states
    Hmax = int(steps.max()) if n else 0
    nodes = np.full((n, Hmax), -1, dtype=np.int64)
    states = np.full((n, Hmax), -1, dtype=np.int64)
    acts = np.full((n, Hmax), -1, dtype=np.int64)
    rews = np.zeros((n, Hmax))
    if n == 0:
        return nodes, states, acts, rews
    s = categorical(rng, np.broadcast_to(model.d0, (n, S)))
    o = categorical(rng, model.emission[s])
    node = graph.roots[o]
    for k in range(Hmax):
        live = np.flatnonzero(steps > k)
        nodes[live, k] = node[live]
        states[live, k] = s[live]
        _check_support(pi, node[live])
        a = categorical(rng, pi[node[live]])
        acts[live, k] = a
        rews[live, k] = model.reward[s[live], a]
        go = steps[live] > k + 1
        idx, a_go = live[go], a[go]
        if len(idx) == 0:
            break
        s_prev = s[idx]
        s_next = categorical(rng, model.transition[s_prev, a_go])
        emitter = s_next if model.order == PREDICT_FIRST else s_prev
        o_next = categorical(rng, model.emission[emitter])
        node[idx] = graph.child[node[idx], a_go, o_next]
        s[idx] = s_next
    return nodes, states, acts, rews


def _branch(model, rng, s, a):
    r = model.reward[s, a]
    s2 = categorical(rng, model.transition[s, a])
    emitter = s2 if model.order == PREDICT_FIRST else s
    return r, categorical(rng, model.emission[emitter])


def prefix_lengths(model, n, rng, prefix_dist=GEOMETRIC, max_depth=None):
    """Sample the prefix length ``h`` of each D1 record.

    ``geometric`` draws ``P(h = k) = (1 - gamma) gamma^(k - 1)`` capped at
    ``max_depth``; ``uniform`` draws from ``1..max_depth``.
    """
    if prefix_dist == GEOMETRIC:
        if model.horizon is not None:
            raise ValueError("geometric prefixes need a discounted model")
        h = rng.geometric(1.0 - model.gamma, size=n) if model.gamma > 0 else np.ones(n, dtype=np.int64)
        return np.minimum(h, max_depth).astype(np.int64)
    if prefix_dist == UNIFORM:
        return rng.integers(1, max_depth + 1, size=n).astype(np.int64)
    raise ValueError(f"unknown prefix distribution {prefix_dist!r}")


def prefix_law(model, prefix_dist, max_depth):
    """Exact ``P(h = k)`` for ``k = 1..max_depth``."""
    k = np.arange(1, max_depth + 1)
    if prefix_dist == GEOMETRIC:
        p = (1.0 - model.gamma) * model.gamma ** (k - 1)
        p[-1] = model.gamma ** (max_depth - 1)
        return p
    return np.full(max_depth, 1.0 / max_depth)


def gen_d1(model, pi_b, n, seed, max_depth, prefix_dist=GEOMETRIC, mode=INDEPENDENT, graph=None):
    """Double-sampled transitions.

    The prefix is a genuine rollout of ``pi_b``. Branch A continues from the
    rollout's latent state. Branch B restarts from a fresh draw of the latent
    state given the prefix (the simulator reset), so the two branches are
    conditionally independent. In ``shared-reward`` mode branch B reuses
    ``rA``.
    """
    if mode not in (INDEPENDENT, SHARED):
        raise ValueError(f"unknown mode {mode!r}")
    if graph is None:
        graph = enumerate_reachable(model, max_depth + 1)
    pi = pi_b.table(graph)
    rng = substream(seed, "d1")
    h = prefix_lengths(model, n, rng, prefix_dist, max_depth)
    nodes, states, _, _ = _simulate(model, graph, pi, n, h, rng)
    rows = np.arange(n)
    node = nodes[rows, h - 1] if n else np.zeros(0, dtype=np.int64)
    sA = states[rows, h - 1] if n else np.zeros(0, dtype=np.int64)
    if n:
        _check_support(pi, node)
    a = categorical(rng, pi[node]) if n else np.zeros(0, dtype=np.int64)
    rA, oA = _branch(model, rng, sA, a) if n else (np.zeros(0), np.zeros(0, dtype=np.int64))
    sB = categorical(rng, graph.beliefs[node]) if n else np.zeros(0, dtype=np.int64)
    rB, oB = _branch(model, rng, sB, a) if n else (np.zeros(0), np.zeros(0, dtype=np.int64))
    if mode == SHARED:
        rB = rA.copy()
    meta = {
        "kind": "d1",
        "model_hash": model.hash(),
        "policy_hash": pi_b.hash(),
        "n": int(n),
        "seed": int(seed),
        "prefix_dist": prefix_dist,
        "max_depth": int(max_depth),
        "mode": mode,
        "generator_version": GENERATOR_VERSION,
    }
    return D1Dataset(
        h=h,
        prefix=[graph.histories[i] for i in node],
        a=np.asarray(a, dtype=np.int64),
        rA=np.asarray(rA, dtype=float),
        oA=np.asarray(oA, dtype=np.int64),
        rB=np.asarray(rB, dtype=float),
        oB=np.asarray(oB, dtype=np.int64),
        mode=mode,
        meta=meta,
    )


def gen_d2(model, pi_b, n, H, seed, graph=None):
    """``n`` behavior-policy trajectories of ``H`` steps."""
    if H < 1:
        raise ValueError("H must be at least 1")
    if graph is None:
        graph = enumerate_reachable(model, H)
    pi = pi_b.table(graph)
    rng = substream(seed, "d2")
    steps = np.full(n, H, dtype=np.int64)
    nodes, _, acts, rews = _simulate(model, graph, pi, n, steps, rng)
    obs = graph.last_obs[nodes] if n else np.zeros((0, H), dtype=np.int64)
    meta = {
        "kind": "d2",
        "model_hash": model.hash(),
        "policy_hash": pi_b.hash(),
        "n": int(n),
        "seed": int(seed),
        "horizon": int(H),
        "generator_version": GENERATOR_VERSION,
    }
    return D2Dataset(obs=np.asarray(obs, dtype=np.int64), acts=acts, rews=rews, meta=meta)


# ------------------------------------------------------------------ persistence


def _lines(ds):
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in ds.records())


def save(ds, path):
    """Write ``data.jsonl`` and ``meta.json`` under the directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    body = _lines(ds).encode()
    meta = dict(ds.meta, data_sha256=hashlib.sha256(body).hexdigest())
    (path / "data.jsonl").write_bytes(body)
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return path


_D1_KEYS = {"h", "prefix", "a", "rA", "oA", "rB", "oB", "mode"}


def load(path, model=None):
    """Read a dataset written by :func:`save`.

    Raises :class:`SchemaMismatch` for malformed or truncated files and
    :class:`HashMismatch` when the data or the model disagree with the meta.
    """
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        body = (path / "data.jsonl").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaMismatch(f"cannot read dataset at {path}: {exc}") from exc
    if meta.get("kind") not in ("d1", "d2"):
        raise SchemaMismatch("meta.json has no valid kind")
    if body and not body.endswith(b"\n"):
        raise SchemaMismatch("data file is truncated")
    try:
        recs = [json.loads(line) for line in body.decode().splitlines()]
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"malformed record: {exc}") from exc
    if len(recs) != meta.get("n"):
        raise SchemaMismatch(f"expected {meta.get('n')} records, found {len(recs)}")
    if hashlib.sha256(body).hexdigest() != meta.get("data_sha256"):
        raise HashMismatch("data file does not match its recorded hash")
    if model is not None and model.hash() != meta.get("model_hash"):
        raise HashMismatch("dataset was generated from a different model")
    meta = {k: v for k, v in meta.items() if k != "data_sha256"}
    try:
        if meta["kind"] == "d1":
            if any(set(r) != _D1_KEYS for r in recs):
                raise SchemaMismatch("D1 record has unexpected fields")
            return D1Dataset(
                h=np.array([r["h"] for r in recs], dtype=np.int64),
                prefix=[tuple(r["prefix"]) for r in recs],
                a=np.array([r["a"] for r in recs], dtype=np.int64),
                rA=np.array([r["rA"] for r in recs], dtype=float),
                oA=np.array([r["oA"] for r in recs], dtype=np.int64),
                rB=np.array([r["rB"] for r in recs], dtype=float),
                oB=np.array([r["oB"] for r in recs], dtype=np.int64),
                mode=meta["mode"],
                meta=meta,
            )
        H = meta["horizon"]
        steps = np.array([r["steps"] for r in recs], dtype=float).reshape(len(recs), H, 3)
        return D2Dataset(
            obs=steps[:, :, 0].astype(np.int64),
            acts=steps[:, :, 1].astype(np.int64),
            rews=steps[:, :, 2],
            meta=meta,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaMismatch):
            raise
        raise SchemaMismatch(f"record does not match the schema: {exc}") from exc
