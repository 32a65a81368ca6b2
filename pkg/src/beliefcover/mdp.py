"""Explicit finite MDPs: policy evaluation, occupancy and Bellman operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class FiniteMDP:
    """Tabular MDP with ``P[x, a, x']``, ``r[x, a]`` and initial law ``d0``.

    ``horizon`` switches to undiscounted finite-horizon evaluation.
    """

    P: np.ndarray
    r: np.ndarray
    d0: np.ndarray
    gamma: float
    horizon: int | None = None

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def _pi(self, pi):
        pi = np.asarray(pi, dtype=float)
        if pi.ndim == 1:
            pi = np.broadcast_to(pi, (self.n_states, pi.size))
        return pi

    def evaluate(self, pi):
        """Return ``(Q, V)`` for a stationary policy table ``pi[x, a]``."""
        pi = self._pi(pi)
        if self.horizon is not None:
            V = np.zeros(self.n_states)
            for _ in range(self.horizon):
                Q = self.r + self.P @ V
                V = (pi * Q).sum(axis=1)
            return Q, V
        P_pi = np.einsum("xa,xay->xy", pi, self.P)
        r_pi = (pi * self.r).sum(axis=1)
        V = np.linalg.solve(np.eye(self.n_states) - self.gamma * P_pi, r_pi)
        Q = self.r + self.gamma * self.P @ V
        return Q, V

    def value(self, pi):
        return float(self.d0 @ self.evaluate(pi)[1])

    def bellman(self, Q, pi):
        """``(T^pi Q)(x, a) = r + gamma * E[Q(x', pi)]``."""
        pi = self._pi(pi)
        v = (pi * Q).sum(axis=1)
        return self.r + self.gamma * self.P @ v

    def occupancy(self, pi):
        """Normalized discounted occupancy ``d(x, a)``; per-step uniform for finite horizon."""
        pi = self._pi(pi)
        P_pi = np.einsum("xa,xay->xy", pi, self.P)
        if self.horizon is not None:
            mu, total = self.d0.copy(), np.zeros(self.n_states)
            for _ in range(self.horizon):
                total += mu
                mu = mu @ P_pi
            return (total / self.horizon)[:, None] * pi
        mu = (1.0 - self.gamma) * np.linalg.solve((np.eye(self.n_states) - self.gamma * P_pi).T, self.d0)
        return mu[:, None] * pi

    def q_value_at_start(self, Q, pi):
        """``J_Q(pi) = E_{x ~ d0}[Q(x, pi)]``."""
        pi = self._pi(pi)
        return float(self.d0 @ (pi * Q).sum(axis=1))


def random_mdp(n_states, n_actions, rng, gamma=0.9, alpha=1.0):
    P = rng.dirichlet(np.full(n_states, alpha), size=(n_states, n_actions))
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    d0 = rng.dirichlet(np.full(n_states, alpha))
    return FiniteMDP(P=P, r=r, d0=d0, gamma=gamma)
