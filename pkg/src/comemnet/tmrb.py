"""Node-adaptive temporal memory replay buffer.

One global vector ``H`` (dimension ``tod_dim + dow_dim``) summarizes the
time-embedding regime of a period. Per training batch:

1. ``delta``: L1 distance of each row's time embedding from ``H_prev``,
2. ``topk_nodes``: the K rows that moved the most,
3. ``weighted_average``: their mean, right-multiplied by a learned matrix,
4. ``gated_update``: a GRU-style gate mixing ``H_prev`` and that average.

The result is fed to the backbone as a prior and carried (detached) to the
next batch; the value at the end of a period is committed to the store.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from typing import Sequence

import numpy as np

from .backbone import BackboneParams
from .errors import ConfigError
from .numeric import Tape, Var

PRIOR_MODES = ("full", "random_select", "no_update", "off")


def delta(t_cur, h_prev) -> np.ndarray:
    """Per-row L1 norm of |T - H_prev|."""
    t_cur = np.asarray(t_cur, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(1, -1)
    if t_cur.shape[1] != h_prev.shape[1]:
        raise ConfigError(f"dims differ: {t_cur.shape} vs {h_prev.shape}")
    return np.abs(t_cur - h_prev).sum(axis=1)


def topk_nodes(deltas, k: int) -> np.ndarray:
    """Indices of the k largest deltas, ties to the lower index, returned sorted by rank."""
    if k < 1:
        raise ConfigError("K must be at least 1")
    deltas = np.asarray(deltas, dtype=np.float64)
    # lexsort: last key is primary
    order = np.lexsort((np.arange(deltas.size), -deltas))
    return order[:k]


def weighted_average(tape: Tape, rows, w) -> Var:
    """mean(rows) · W as a 1×D Var; the divisor is the actual row count."""
    rows = tape.var(rows)
    if rows.shape[0] == 0:
        raise ConfigError("empty key-node set")
    return tape.matmul(tape.mean_rows(rows), w)


def combine(tape: Tape, z, h, h_a) -> Var:
    """H = z·h + (1 - z)·H_a, elementwise."""
    return tape.add(tape.mul(z, h), tape.mul(tape.one_minus(z), h_a))


def gated_update(tape: Tape, h_prev, h_a, w_r, w_z, w_t) -> Var:
    """Reset/update-gated mix of the previous memory and the current average.

    ``h_prev`` is a constant (no gradient crosses periods or batches); the
    gate matrices map the 2D concatenation back to D.
    """
    h_prev = tape.var(np.asarray(h_prev.value if isinstance(h_prev, Var) else h_prev,
                                 dtype=np.float64).reshape(1, -1))
    h_a = tape.var(h_a)
    both = tape.concat([h_prev, h_a])
    r = tape.sigmoid(tape.matmul(both, w_r))
    z = tape.sigmoid(tape.matmul(both, w_z))
    h = tape.tanh(tape.matmul(tape.concat([h_a, tape.mul(h_prev, r)]), w_t))
    return combine(tape, z, h, h_a)


def time_features(params: BackboneParams, tod, dow, n_nodes: int) -> np.ndarray:
    """Row-replicated [tod ‖ dow] embeddings, one row per (window, node)."""
    tod = np.repeat(np.asarray(tod, dtype=np.intp), n_nodes)
    dow = np.repeat(np.asarray(dow, dtype=np.intp), n_nodes)
    return np.concatenate([params["tod_embed"].value[tod], params["dow_embed"].value[dow]], axis=1)


def temporal_prior(tape: Tape, params: BackboneParams, tod, dow, n_nodes: int, h_prev,
                   k: int = 12, mode: str = "full", rng: np.random.Generator | None = None):
    """Build this batch's prior on ``tape``; ``None`` when the buffer is off."""
    if mode == "off":
        return None
    if mode not in PRIOR_MODES:
        raise ConfigError(f"unknown prior mode {mode!r}")
    t_val = time_features(params, tod, dow, n_nodes)
    if mode == "random_select":
        if rng is None:
            raise ConfigError("random_select needs an rng")
        keys = np.sort(rng.choice(t_val.shape[0], size=min(k, t_val.shape[0]), replace=False))
    else:
        keys = topk_nodes(delta(t_val, h_prev), k)
    window = keys // n_nodes
    tod_k = np.asarray(tod, dtype=np.intp)[window]
    dow_k = np.asarray(dow, dtype=np.intp)[window]
    rows = tape.concat([tape.gather(params["tod_embed"], tod_k),
                        tape.gather(params["dow_embed"], dow_k)])
    h_a = weighted_average(tape, rows, params["tmrb.w"])
    if mode == "no_update":
        return h_a
    return gated_update(tape, h_prev, h_a, params["tmrb.w_r"], params["tmrb.w_z"],
                        params["tmrb.w_t"])


class TemporalMemoryBuffer:
    """Committed per-period memory vectors plus the working value."""

    def __init__(self, dim: int, k: int = 12):
        self.dim = dim
        self.k = k
        self.store: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.running = np.zeros(dim)

    @property
    def h_prev(self) -> np.ndarray:
        return self.running

    def update(self, h) -> None:
        h = np.asarray(h.value if isinstance(h, Var) else h, dtype=np.float64).ravel()
        if h.shape != (self.dim,):
            raise ConfigError(f"memory vector of shape {h.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite memory vector")
        self.running = h.copy()

    def commit_period(self, label: str) -> None:
        if label in self.store:
            raise ConfigError(f"period {label!r} already committed")
        if not np.all(np.isfinite(self.running)):
            raise FloatingPointError("non-finite memory vector")
        self.store[label] = self.running.copy()

    def memory_for(self, label: str) -> np.ndarray:
        """Committed vector of ``label``, or the working value if not yet committed."""
        return self.store.get(label, self.running)

    def snapshot(self) -> dict:
        return {"store": OrderedDict((k, v.copy()) for k, v in self.store.items()),
                "running": self.running.copy()}

    def restore(self, snap: dict) -> None:
        self.store = OrderedDict((k, v.copy()) for k, v in snap["store"].items())
        self.running = snap["running"].copy()

    def to_json(self) -> dict:
        return {"dim": self.dim, "k": self.k,
                "store": {k: v.tolist() for k, v in self.store.items()},
                "running": self.running.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "TemporalMemoryBuffer":
        buf = cls(doc["dim"], doc["k"])
        buf.store = OrderedDict((k, np.array(v, dtype=np.float64)) for k, v in doc["store"].items())
        buf.running = np.array(doc["running"], dtype=np.float64)
        return buf

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)
