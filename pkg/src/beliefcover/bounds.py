"""Finite-sample error bounds for both estimators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .abstraction import compute_Lphi1


def hoeffding_band(n, delta, Rmax, gamma):
    """Half-width for one empirical double-sampling loss at confidence ``1 - delta``."""
    return math.sqrt(8.0 * Rmax**4 / (n * (1.0 - gamma) ** 4) * math.log(2.0 / delta))


# ------------------------------------------------------------------ double sampling


def ds_stat_term(n, delta, F_card, Rmax, gamma):
    """Uniform deviation of the empirical loss over a class of size ``F_card``."""
    return math.sqrt(32.0 * Rmax**4 / (n * (1.0 - gamma) ** 4) * math.log(2.0 * F_card / delta))


def ds_L_E(Rmax, gamma, L_Q):
    return 8.0 * Rmax / (1.0 - gamma) * ((1.0 + gamma) * L_Q + Rmax / (1.0 - gamma))


def ds_L_phi(Rmax, gamma, L_Q, L_pi, L_V):
    """Abstraction term: policy/value part plus the value-readout gap."""
    return compute_Lphi1(L_pi, L_V, Rmax, gamma) + Rmax / (1.0 - gamma) + L_Q


def compute_bound_ds(C_pi_phi, n, delta, F_card, Rmax, gamma, L_Q, L_pi, L_V, eps):
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    stat = ds_stat_term(n, delta, F_card, Rmax, gamma)
    inner = stat + ds_L_E(Rmax, gamma, L_Q) * eps
    return math.sqrt(C_pi_phi) / (1.0 - gamma) * math.sqrt(inner) + ds_L_phi(Rmax, gamma, L_Q, L_pi, L_V) * eps


def balanced_eps(n, delta, F_card, Rmax, gamma, L_Q):
    """Cover radius balancing the statistical and the discretization terms."""
    return ds_stat_term(n, delta, F_card, Rmax, gamma) / ds_L_E(Rmax, gamma, L_Q)


def balanced_regime(n, delta, F_card, Rmax, gamma, L_Q, L_pi, L_V):
    """Sample size above which the ``L_phi * eps`` term is dominated."""
    ratio = ds_L_phi(Rmax, gamma, L_Q, L_pi, L_V) / ds_L_E(Rmax, gamma, L_Q)
    return n >= 8.0 * Rmax**4 * ratio**4 * math.log(2.0 * F_card / delta)


def balanced_bound(C_pi_phi, n, delta, F_card, Rmax, gamma):
    """Closed form at the balancing radius, valid when :func:`balanced_regime` holds."""
    rate = 128.0 * Rmax**4 / (n * (1.0 - gamma) ** 4) * math.log(2.0 * F_card / delta)
    return 2.0 * math.sqrt(C_pi_phi) / (1.0 - gamma) * rate**0.25


@dataclass
class DSBound:
    eps: float
    bound: float
    closed_form: float | None
    regime: bool

    def as_dict(self):
        return asdict(self)


def ds_bound_report(C_pi_phi, n, delta, F_card, Rmax, gamma, L_Q, L_pi, L_V, eps=None):
    """Bound at ``eps``, or at the balancing radius when ``eps`` is None."""
    use_cor = eps is None
    if use_cor:
        eps = balanced_eps(n, delta, F_card, Rmax, gamma, L_Q)
    full = compute_bound_ds(C_pi_phi, n, delta, F_card, Rmax, gamma, L_Q, L_pi, L_V, eps)
    regime = balanced_regime(n, delta, F_card, Rmax, gamma, L_Q, L_pi, L_V)
    closed = balanced_bound(C_pi_phi, n, delta, F_card, Rmax, gamma) if use_cor else None
    return DSBound(eps=eps, bound=full, closed_form=closed, regime=regime)


# ------------------------------------------------------------------ FDVF


def default_c(C=1.0):
    return 1406.0 + math.sqrt(80707.0 + 29.0 * C)


def class_scale(V_norm, Theta_norm):
    return max(V_norm + 1.0, Theta_norm)


def fdvf_L_E(H, C_mu, L_pi, V_norm, Theta_norm, min_pib, min_obs):
    """Discretization constant of the truncated objective.

    ``min_pib`` is the smallest behavior probability and ``min_obs`` the
    smallest ``P(o | tau)`` on the support.
    """
    vt = V_norm * Theta_norm
    if L_pi > 0:
        floor = min(min_obs, min_pib / L_pi)
        policy_part = 2.0 * H * (C_mu + 1.0) * L_pi * vt / min_pib
    else:
        floor = min_obs
        policy_part = 0.0
    return 3.0 * (policy_part + H * C_mu * vt + 3.0 * H**2 * max(C_mu * vt, 0.5 * Theta_norm**2) / floor)


def fdvf_L_phi(L_pi, L_V, Rmax, H, V_norm, tighter=False):
    if tighter:
        return Rmax * H * L_pi + Rmax * H**2 * L_pi + V_norm
    return compute_Lphi1(L_pi, L_V, Rmax, horizon=H) + V_norm


def compute_bound_fdvf(coverage_ratio, n, delta, H, C_V, C_mu, L_E, L_phi, eps, c=None, V_card=1, Theta_card=1):
    c = default_c() if c is None else c
    stat = c * H * C_V**2 * C_mu / n * math.log(V_card * Theta_card / delta)
    return L_phi * eps + math.sqrt(H) * coverage_ratio * math.sqrt(stat + L_E * eps)
