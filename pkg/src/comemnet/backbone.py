"""Embedding-based MLP forecaster with an expandable node-embedding table.

Per node and window the encoder input is the concatenation of

* a linear projection of the last ``t_h`` normalized readings,
* the node's embedding row,
* time-of-day and day-of-week embeddings at the window's last step,
* the temporal prior vector broadcast to every row,

followed by a linear fuse to ``hidden``, ``layers`` residual MLP blocks and a
shared per-node projection to ``t_f`` outputs. No adjacency enters the model.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import DAYS_PER_WEEK, STEPS_PER_DAY
from .numeric import Param, Tape, Var

NODE_INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneConfig:
    t_h: int = 12
    t_f: int = 12
    layers: int = 3
    hidden: int = 64
    node_dim: int = 32
    tod_dim: int = 16
    dow_dim: int = 16

    @property
    def prior_dim(self) -> int:
        return self.tod_dim + self.dow_dim


@dataclass
class ForecastBatch:
    """``x``: (B, N, t_h) normalized history for ``nodes`` over B windows."""

    x: np.ndarray
    nodes: Sequence[str]
    tod: np.ndarray
    dow: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.x.shape[0] * self.x.shape[1]


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class BackboneParams:
    """All trainable tables of one branch, keyed by stable names.

    ``node_index`` maps sensor ID to its row in ``node_embed``; rows are only
    ever appended, never re-drawn.
    """

    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        rng = self.rng
        c = cfg
        d = c.prior_dim
        fuse_in = c.hidden + c.node_dim + c.tod_dim + c.dow_dim + d
        t: "OrderedDict[str, Param]" = OrderedDict()
        t["node_embed"] = Param(np.zeros((0, c.node_dim)), decay=False)
        t["tod_embed"] = Param(rng.normal(0, NODE_INIT_STD, (STEPS_PER_DAY, c.tod_dim)), decay=False)
        t["dow_embed"] = Param(rng.normal(0, NODE_INIT_STD, (DAYS_PER_WEEK, c.dow_dim)), decay=False)
        t["input.w"] = Param(_glorot(rng, c.t_h, c.hidden))
        t["input.b"] = Param(np.zeros((1, c.hidden)))
        t["fuse.w"] = Param(_glorot(rng, fuse_in, c.hidden))
        t["fuse.b"] = Param(np.zeros((1, c.hidden)))
        for i in range(c.layers):
            t[f"block{i}.w1"] = Param(_glorot(rng, c.hidden, c.hidden))
            t[f"block{i}.b1"] = Param(np.zeros((1, c.hidden)))
            t[f"block{i}.w2"] = Param(_glorot(rng, c.hidden, c.hidden))
            t[f"block{i}.b2"] = Param(np.zeros((1, c.hidden)))
        t["proj.w"] = Param(_glorot(rng, c.hidden, c.t_f))
        t["proj.b"] = Param(np.zeros((1, c.t_f)))
        # temporal memory: averaging matrix and the three gate matrices
        t["tmrb.w"] = Param(_glorot(rng, d, d))
        t["tmrb.w_r"] = Param(_glorot(rng, 2 * d, d))
        t["tmrb.w_z"] = Param(_glorot(rng, 2 * d, d))
        t["tmrb.w_t"] = Param(_glorot(rng, 2 * d, d))
        self.tables = t
        self.node_index: dict[str, int] = {}

    def __getitem__(self, name: str) -> Param:
        return self.tables[name]

    def params(self) -> "OrderedDict[str, Param]":
        return self.tables

    @property
    def node_ids(self) -> list[str]:
        return list(self.node_index)

    def ensure_nodes(self, ids: Iterable[str]) -> list[str]:
        """Add N(0, 0.02²) rows for unseen IDs; returns the IDs that were added."""
        new = []
        for s in ids:
            if s not in self.node_index and s not in new:
                new.append(s)
        if new:
            rows = self.rng.normal(0.0, NODE_INIT_STD, size=(len(new), self.cfg.node_dim))
            self.add_rows(new, rows)
        return new

    def add_rows(self, ids: Sequence[str], rows: np.ndarray) -> None:
        base = len(self.node_index)
        for k, s in enumerate(ids):
            self.node_index[s] = base + k
        self.tables["node_embed"].append_rows(rows)

    def node_rows(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return np.fromiter((self.node_index[s] for s in ids), dtype=np.intp, count=len(ids))
        except KeyError as e:
            raise KeyError(f"node {e.args[0]!r} has no embedding; call ensure_nodes first") from None

    def embedding(self, sid: str) -> np.ndarray:
        return self.tables["node_embed"].value[self.node_index[sid]]

    def copy(self) -> "BackboneParams":
        other = BackboneParams.__new__(BackboneParams)
        other.cfg = self.cfg
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        other.tables = OrderedDict((k, p.copy()) for k, p in self.tables.items())
        other.node_index = dict(self.node_index)
        return other


def _hidden(tape: Tape, params: BackboneParams, batch: ForecastBatch, h_prior) -> Var:
    c = params.cfg
    b, n, t_h = batch.x.shape
    rows = b * n
    x = batch.x.reshape(rows, t_h)
    node_rows = np.tile(params.node_rows(batch.nodes), b)
    tod_rows = np.repeat(np.asarray(batch.tod, dtype=np.intp), n)
    dow_rows = np.repeat(np.asarray(batch.dow, dtype=np.intp), n)
    if h_prior is None:
        h_prior = np.zeros((1, c.prior_dim))
    parts = [
        tape.linear(x, params["input.w"], params["input.b"]),
        tape.gather(params["node_embed"], node_rows),
        tape.gather(params["tod_embed"], tod_rows),
        tape.gather(params["dow_embed"], dow_rows),
        tape.repeat_rows(h_prior, rows),
    ]
    h = tape.linear(tape.concat(parts), params["fuse.w"], params["fuse.b"])
    for i in range(c.layers):
        inner = tape.relu(tape.linear(h, params[f"block{i}.w1"], params[f"block{i}.b1"]))
        h = tape.add(h, tape.linear(inner, params[f"block{i}.w2"], params[f"block{i}.b2"]))
    return h


def forward(tape: Tape, params: BackboneParams, batch: ForecastBatch, h_prior=None) -> Var:
    """Predictions of shape (B·N, t_f), rows ordered window-major."""
    if batch.n_rows == 0:
        return tape.var(np.zeros((0, params.cfg.t_f)))
    h = _hidden(tape, params, batch, h_prior)
    return tape.linear(h, params["proj.w"], params["proj.b"])


def encode_features(params: BackboneParams, batch: ForecastBatch, h_prior=None) -> np.ndarray:
    """Encoder output per node, averaged over the batch's windows: (N, hidden)."""
    b, n, _ = batch.x.shape
    h = _hidden(Tape(), params, batch, h_prior).value
    return h.reshape(b, n, -1).mean(axis=0)
