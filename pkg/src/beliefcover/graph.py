"""Enumeration of on-support histories and their beliefs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .belief import initial_obs_probs
from .errors import DomainMismatch, TreeTooLarge

DEFAULT_NODE_CAP = 1_000_000


@dataclass(eq=False)
class BeliefGraph:
    """All on-support histories up to ``depth`` observations.

    Node arrays are aligned by node id and nodes are stored level by level, so
    a parent always precedes its children.

    Attributes
    ----------
    beliefs : (N, S) array
    depth : (N,) int array, number of observations in the node's history
    parent, parent_action, last_obs : (N,) int arrays (-1 for roots' parent)
    child : (N, A, O) int array, -1 when the edge is off-support or beyond depth
    obs_prob : (N, A, O) array, ``P(o | b, a)``
    roots : (O,) int array of depth-1 nodes (-1 when ``P(o1) = 0``)
    root_prob : (O,) array
    """

    model: object
    max_depth: int
    beliefs: np.ndarray
    depth: np.ndarray
    parent: np.ndarray
    parent_action: np.ndarray
    last_obs: np.ndarray
    child: np.ndarray
    obs_prob: np.ndarray
    roots: np.ndarray
    root_prob: np.ndarray
    histories: list = field(repr=False)
    _index: dict | None = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return len(self.depth)

    @property
    def index(self):
        if self._index is None:
            self._index = {h: i for i, h in enumerate(self.histories)}
        return self._index

    def node(self, history):
        try:
            return self.index[tuple(history)]
        except KeyError:
            raise DomainMismatch(f"history {tuple(history)} is not in the graph") from None

    def nodes_of(self, histories):
        idx = self.index
        try:
            return np.fromiter((idx[tuple(h)] for h in histories), dtype=np.int64, count=len(histories))
        except KeyError as exc:
            raise DomainMismatch(f"history {exc.args[0]} is not in the graph") from None

    def level(self, k):
        return np.flatnonzero(self.depth == k)

    def rewards(self):
        """``r(b, a)`` for every node, shape (N, A)."""
        return self.beliefs @ self.model.reward

    def reach_probs(self, policy_table):
        """Probability of reaching each node when acting with ``policy_table`` (N, A)."""
        p = np.zeros(self.n_nodes)
        ok = self.roots >= 0
        p[self.roots[ok]] = self.root_prob[ok]
        for k in range(1, self.max_depth):
            lvl = self.level(k)
            w = p[lvl, None, None] * policy_table[lvl, :, None] * self.obs_prob[lvl]
            kids = self.child[lvl]
            mask = kids >= 0
            np.add.at(p, kids[mask], w[mask])
        return p


def enumerate_reachable(model, depth, policy_support=None, node_cap=DEFAULT_NODE_CAP, support_tol=0.0):
    """Enumerate every on-support history with at most ``depth`` observations.

    Parameters
    ----------
    policy_support : Policy, optional
        When given, only actions with positive probability under the policy are
        expanded.
    node_cap : int
        Raise :class:`TreeTooLarge` before the graph would exceed this size.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    S, A, O = model.n_states, model.n_actions, model.n_obs
    M = model.kernel
    p1 = initial_obs_probs(model)
    ok1 = np.flatnonzero(p1 > support_tol)
    if len(ok1) > node_cap:
        raise TreeTooLarge(f"{len(ok1)} root nodes exceed the cap {node_cap}")

    beliefs = [(model.d0[None, :] * model.emission[:, ok1].T) / p1[ok1, None]]
    depths = [np.ones(len(ok1), dtype=np.int64)]
    parents = [np.full(len(ok1), -1, dtype=np.int64)]
    pacts = [np.full(len(ok1), -1, dtype=np.int64)]
    lobs = [ok1.astype(np.int64)]
    histories = [(int(o),) for o in ok1]
    roots = np.full(O, -1, dtype=np.int64)
    roots[ok1] = np.arange(len(ok1))

    child_blocks, prob_blocks = [], []
    level_start, n_total = 0, len(ok1)
    level_B = beliefs[0]
    for k in range(1, depth + 1):
        m = len(level_B)
        U = np.einsum("ms,aost->maot", level_B, M)
        P = U.sum(axis=-1)
        if k == depth:
            child_blocks.append(np.full((m, A, O), -1, dtype=np.int64))
            prob_blocks.append(P)
            break
        allowed = np.ones((m, A), dtype=bool)
        if policy_support is not None:
            ids = np.arange(level_start, level_start + m)
            pt = np.array([policy_support.probs(histories[i], level_B[j]) for j, i in enumerate(ids)])
            allowed = pt > 0
        live = (P > support_tol) & allowed[:, :, None]
        n_new = int(live.sum())
        if n_total + n_new > node_cap:
            raise TreeTooLarge(f"enumeration to depth {depth} needs more than {node_cap} nodes")
        idx = np.argwhere(live)
        kids = np.full((m, A, O), -1, dtype=np.int64)
        kids[live] = n_total + np.arange(n_new)
        child_blocks.append(kids)
        prob_blocks.append(P)
        src, act, obs = idx[:, 0], idx[:, 1], idx[:, 2]
        new_B = U[src, act, obs] / P[src, act, obs][:, None]
        gids = level_start + src
        beliefs.append(new_B)
        depths.append(np.full(n_new, k + 1, dtype=np.int64))
        parents.append(gids)
        pacts.append(act.astype(np.int64))
        lobs.append(obs.astype(np.int64))
        histories.extend(histories[g] + (int(a), int(o)) for g, a, o in zip(gids, act, obs))
        level_start, n_total = n_total, n_total + n_new
        level_B = new_B
        if n_new == 0:
            break

    child = np.concatenate(child_blocks) if child_blocks else np.full((0, A, O), -1)
    obs_prob = np.concatenate(prob_blocks)
    n = sum(len(d) for d in depths)
    if child.shape[0] < n:
        pad = n - child.shape[0]
        child = np.concatenate([child, np.full((pad, A, O), -1, dtype=np.int64)])
        extra_B = np.concatenate(beliefs)[-pad:]
        obs_prob = np.concatenate([obs_prob, np.einsum("ms,aost->mao", extra_B, M)])
    return BeliefGraph(
        model=model,
        max_depth=depth,
        beliefs=np.concatenate(beliefs),
        depth=np.concatenate(depths),
        parent=np.concatenate(parents),
        parent_action=np.concatenate(pacts),
        last_obs=np.concatenate(lobs),
        child=child,
        obs_prob=obs_prob,
        roots=roots,
        root_prob=p1,
        histories=histories,
    )
