"""Tabular POMDP container, validation and JSON persistence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BadDiscount, NonStochasticRow, RewardOutOfRange, SchemaMismatch

PREDICT_FIRST = "predict-first"
UPDATE_FIRST = "update-first"
ORDERS = (PREDICT_FIRST, UPDATE_FIRST)

ROW_TOL = 1e-12
LOAD_TOL = 1e-9


def _frozen(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularPOMDP:
    """Finite POMDP with deterministic rewards.

    Parameters
    ----------
    transition : array, shape (S, A, S)
        ``transition[s, a, s']`` is the probability of moving to ``s'``.
    emission : array, shape (S, O)
        ``emission[s, o]`` is the probability that state ``s`` emits ``o``.
    reward : array, shape (S, A)
        Deterministic reward in ``[0, rmax]``.
    d0 : array, shape (S,)
        Initial state distribution.
    gamma : float
        Discount in ``[0, 1)``; must be 1 when ``horizon`` is set.
    horizon : int or None
        Finite horizon ``H``.
    order : {"predict-first", "update-first"}
        Emission timing. Under ``predict-first`` the observation at step h is
        emitted by ``s_h``. Under ``update-first`` the observation following
        action ``a_h`` is emitted by ``s_h`` before it transitions, and the
        first observation is emitted by ``s_1``.
    """

    transition: np.ndarray
    emission: np.ndarray
    reward: np.ndarray
    d0: np.ndarray
    rmax: float = 1.0
    gamma: float = 0.9
    horizon: int | None = None
    order: str = PREDICT_FIRST
    state_labels: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("transition", "emission", "reward", "d0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "rmax", float(self.rmax))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.horizon is not None:
            object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_obs(self):
        return self.emission.shape[1]

    @property
    def discount(self):
        """Per-step weight used in returns (1 for finite horizon)."""
        return 1.0 if self.horizon is not None else self.gamma

    @cached_property
    def kernel(self):
        """Joint step kernel ``M[a, o, s, s']`` for the model's timing.

        ``b @ M[a, o]`` is the unnormalized next belief, and its sum is
        ``P(o | b, a)``.
        """
        return joint_kernel(self.transition, self.emission, self.order)

    def with_order(self, order):
        return replace(self, order=order)

    def with_horizon(self, horizon):
        return replace(self, horizon=int(horizon), gamma=1.0)

    def with_discount(self, gamma):
        return replace(self, horizon=None, gamma=float(gamma))

    def to_dict(self):
        out = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_obs": self.n_obs,
            "rmax": self.rmax,
            "d0": self.d0.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "reward": self.reward.tolist(),
            "order": self.order,
        }
        if self.horizon is None:
            out["gamma"] = self.gamma
        else:
            out["horizon"] = self.horizon
        if self.state_labels is not None:
            out["state_labels"] = [list(x) for x in self.state_labels]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def joint_kernel(transition, emission, order=PREDICT_FIRST):
    T = np.asarray(transition)
    E = np.asarray(emission)
    if order == PREDICT_FIRST:
        M = np.einsum("sat,to->aost", T, E)
    elif order == UPDATE_FIRST:
        M = np.einsum("so,sat->aost", E, T)
    else:
        raise ValueError(f"unknown update order {order!r}")
    M.setflags(write=False)
    return M


def _check_rows(arr, kind, tol):
    sums = arr.sum(axis=-1)
    if np.any(arr < 0):
        idx = np.argwhere(arr < 0)[0][:-1]
        raise NonStochasticRow(kind, tuple(int(i) for i in idx))
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        raise NonStochasticRow(kind, idx if len(idx) > 1 else idx[0], float(sums[tuple(bad[0])]))


def validate(model: TabularPOMDP, tol: float = ROW_TOL) -> TabularPOMDP:
    """Check every structural invariant and return the model unchanged."""
    S, A, S2 = model.transition.shape
    if S2 != S or model.emission.shape[0] != S or model.reward.shape != (S, A) or model.d0.shape != (S,):
        raise SchemaMismatch("inconsistent array shapes")
    _check_rows(model.transition, "transition", tol)
    _check_rows(model.emission, "emission", tol)
    _check_rows(model.d0, "d0", tol)
    if model.rmax < 0:
        raise RewardOutOfRange(f"rmax={model.rmax} is negative")
    if np.any(model.reward < 0) or np.any(model.reward > model.rmax):
        raise RewardOutOfRange(
            f"rewards span [{model.reward.min()}, {model.reward.max()}], outside [0, {model.rmax}]"
        )
    if model.horizon is None:
        if not 0.0 <= model.gamma < 1.0:
            raise BadDiscount(f"gamma={model.gamma} must lie in [0, 1) without a horizon")
    else:
        if model.horizon < 1:
            raise BadDiscount(f"horizon={model.horizon} must be positive")
        if model.gamma != 1.0:
            raise BadDiscount("a finite-horizon model must have gamma = 1")
    if model.order not in ORDERS:
        raise SchemaMismatch(f"unknown update order {model.order!r}")
    return model


def _renormalize(arr, kind):
    arr = np.array(arr, dtype=float)
    sums = arr.sum(axis=-1, keepdims=True)
    off = np.abs(sums - 1.0)
    if np.any(off > LOAD_TOL):
        _check_rows(arr, kind, LOAD_TOL)
    # rows already stochastic to rounding are left untouched so round trips are bit-exact
    return np.where(off > ROW_TOL, arr / sums, arr)


_REQUIRED = {"n_states", "n_actions", "n_obs", "rmax", "d0", "transition", "emission", "reward"}
_OPTIONAL = {"gamma", "horizon", "order", "state_labels"}


def model_from_dict(data: dict) -> TabularPOMDP:
    keys = set(data)
    if missing := _REQUIRED - keys:
        raise SchemaMismatch(f"missing keys: {sorted(missing)}")
    if extra := keys - _REQUIRED - _OPTIONAL:
        raise SchemaMismatch(f"unknown keys: {sorted(extra)}")
    if "horizon" in data:
        if data.get("gamma", 1.0) != 1.0:
            raise BadDiscount("a finite-horizon model cannot also be discounted")
    elif "gamma" not in data:
        raise BadDiscount("either gamma or horizon must be given")
    try:
        T = _renormalize(data["transition"], "transition")
        E = _renormalize(data["emission"], "emission")
        d0 = _renormalize(data["d0"], "d0")
        R = np.array(data["reward"], dtype=float)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, NonStochasticRow):
            raise
        raise SchemaMismatch(str(exc)) from exc
    if T.shape != (data["n_states"], data["n_actions"], data["n_states"]) or E.shape != (
        data["n_states"],
        data["n_obs"],
    ):
        raise SchemaMismatch("array shapes disagree with declared sizes")
    labels = data.get("state_labels")
    model = TabularPOMDP(
        transition=T,
        emission=E,
        reward=R,
        d0=d0,
        rmax=data["rmax"],
        gamma=1.0 if "horizon" in data else data["gamma"],
        horizon=data.get("horizon"),
        order=data.get("order", PREDICT_FIRST),
        state_labels=tuple(tuple(x) for x in labels) if labels is not None else None,
    )
    return validate(model)


def load_model(path) -> TabularPOMDP:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc
    return model_from_dict(data)


def save_model(model: TabularPOMDP, path):
    Path(path).write_text(model.to_json() + "\n")
