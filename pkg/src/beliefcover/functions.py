"""Finite function classes stored as explicit tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainMismatch

STATE_ACTION = "abstract-state-action"
HISTORY_ACTION = "history-action"
FUTURE_PAIR = "future-pair"
HISTORY = "history"
KINDS = (STATE_ACTION, HISTORY_ACTION, FUTURE_PAIR, HISTORY)


@dataclass(eq=False)
class FunctionTable:
    """One member of a finite function class.

    Dense kinds (``abstract-state-action``, ``history-action``) store a
    ``(n_states, n_actions)`` array whose rows follow the ids of ``domain``
    (an abstract MDP or a belief graph). Keyed kinds (``future-pair``,
    ``history``) store a 1-D array aligned with ``keys``.
    """

    values: np.ndarray
    domain_kind: str
    bound: float | None = None
    lipschitz_LQ: float | None = None
    keys: list | None = None
    domain: object = field(default=None, repr=False)
    _index: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain_kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.domain_kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.keys is not None:
            self.keys = [tuple(k) for k in self.keys]
            if len(self.keys) != self.values.shape[0]:
                raise ValueError("keys and values differ in length")
        sup = float(np.abs(self.values).max()) if self.values.size else 0.0
        if self.bound is None:
            self.bound = sup
        elif sup > self.bound + 1e-12:
            raise ValueError(f"table exceeds its declared bound ({sup} > {self.bound})")

    @property
    def is_keyed(self):
        return self.keys is not None

    @property
    def index(self):
        if self._index is None:
            self._index = {k: i for i, k in enumerate(self.keys)}
        return self._index

    def get(self, key):
        try:
            return float(self.values[self.index[tuple(key)]])
        except KeyError:
            raise DomainMismatch(f"key {key} outside the table's domain") from None

    def lookup(self, keys):
        idx = self.index
        try:
            return self.values[[idx[k] for k in keys]]
        except KeyError as exc:
            raise DomainMismatch(f"key {exc.args[0]} outside the table's domain") from None

    def to_dict(self):
        out = {"domain_kind": self.domain_kind, "bound": self.bound, "values": self.values.tolist()}
        if self.lipschitz_LQ is not None:
            out["lipschitz_LQ"] = self.lipschitz_LQ
        if self.keys is not None:
            out["keys"] = [list(_plain(k)) for k in self.keys]
        return out

    @classmethod
    def from_dict(cls, d, domain=None):
        keys = d.get("keys")
        if keys is not None:
            keys = [_tuplify(k) for k in keys]
        return cls(
            values=np.array(d["values"], dtype=float),
            domain_kind=d["domain_kind"],
            bound=d.get("bound"),
            lipschitz_LQ=d.get("lipschitz_LQ"),
            keys=keys,
            domain=domain,
        )


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(y) for y in x]
    return int(x) if isinstance(x, (np.integer,)) else x


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(y) for y in x)
    return x


@dataclass(eq=False)
class FunctionClass:
    members: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("a function class needs at least one member")
        kinds = {m.domain_kind for m in self.members}
        if len(kinds) != 1:
            raise DomainMismatch(f"mixed domain kinds {sorted(kinds)}")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    @property
    def domain_kind(self):
        return self.members[0].domain_kind

    @property
    def class_bound(self):
        return max(m.bound for m in self.members)

    def to_json(self):
        return json.dumps([m.to_dict() for m in self.members], sort_keys=True)

    @classmethod
    def from_json(cls, text, domain=None):
        return cls([FunctionTable.from_dict(d, domain) for d in json.loads(text)])


def perturbed_class(base, scales, rng, clip=None):
    """``base`` followed by ``base + c * g`` for random unit-range ``g``.

    Parameters
    ----------
    scales : sequence of float
        One perturbation per entry.
    clip : (lo, hi), optional
        Clip the perturbed values, e.g. to the value range.
    """
    members = [base]
    for c in scales:
        g = rng.uniform(-1.0, 1.0, size=base.values.shape)
        vals = base.values + c * g
        if clip is not None:
            vals = np.clip(vals, *clip)
        members.append(
            FunctionTable(vals, base.domain_kind, keys=base.keys, domain=base.domain, lipschitz_LQ=None)
        )
    return FunctionClass(members)
