"""Checkpoint files: one ``.npz`` holding both branches, optimizer state and memory.

Layout (format version 1)::

    format_version            int
    node_ids                  unicode array, row order of every node_embed table
    {online,target}/<name>    parameter values
    online/<name>#m, #v       AdamW moments; ``online/<name>#step`` step count
    meta/beta, meta/lr        branch hyper-parameters
    memory/labels, memory/H   committed memory vectors in period order
    memory/running            working memory vector

``np.savez`` stores raw float64 bytes, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .branches import DualBranchModel
from .tmrb import TemporalMemoryBuffer

FORMAT_VERSION = 1


def save_checkpoint(path, dual: DualBranchModel, buffer: TemporalMemoryBuffer | None = None) -> None:
    arrays = {"format_version": np.array(FORMAT_VERSION),
              "node_ids": np.array(dual.online.node_ids, dtype=str),
              "meta/backbone": np.array([getattr(dual.cfg, k) for k in BackboneConfig.__dataclass_fields__]),
              "meta/beta": np.array(dual.beta), "meta/lr": np.array(dual.lr),
              "meta/weight_decay": np.array(dual.weight_decay)}
    for name, p in dual.online.params().items():
        arrays[f"online/{name}"] = p.value
        arrays[f"online/{name}#m"] = p.adam_m
        arrays[f"online/{name}#v"] = p.adam_v
        arrays[f"online/{name}#step"] = np.array(p.step_count)
    for name, p in dual.target.params().items():
        arrays[f"target/{name}"] = p.value
    if buffer is not None:
        arrays["memory/labels"] = np.array(list(buffer.store), dtype=str)
        arrays["memory/H"] = (np.stack(list(buffer.store.values())) if buffer.store
                              else np.zeros((0, buffer.dim)))
        arrays["memory/running"] = buffer.running
        arrays["memory/k"] = np.array(buffer.k)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[DualBranchModel, TemporalMemoryBuffer | None]:
    with np.load(Path(path), allow_pickle=False) as z:
        if int(z["format_version"]) != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['format_version'])}")
        cfg = BackboneConfig(*[int(v) for v in z["meta/backbone"]])
        dual = DualBranchModel(cfg, beta=float(z["meta/beta"]), lr=float(z["meta/lr"]),
                               weight_decay=float(z["meta/weight_decay"]))
        ids = [str(s) for s in z["node_ids"]]
        for branch in (dual.online, dual.target):
            branch.node_index = {s: k for k, s in enumerate(ids)}
        for name, p in dual.online.params().items():
            p.value = z[f"online/{name}"].copy()
            p.adam_m = z[f"online/{name}#m"].copy()
            p.adam_v = z[f"online/{name}#v"].copy()
            p.grad = np.zeros_like(p.value)
            p.step_count = int(z[f"online/{name}#step"])
        for name, p in dual.target.params().items():
            p.value = z[f"target/{name}"].copy()
            p.grad = np.zeros_like(p.value)
            p.adam_m = np.zeros_like(p.value)
            p.adam_v = np.zeros_like(p.value)
        buffer = None
        if "memory/running" in z.files:
            buffer = TemporalMemoryBuffer(cfg.tod_dim + cfg.dow_dim, int(z["memory/k"]))
            for label, h in zip(z["memory/labels"], z["memory/H"]):
                buffer.store[str(label)] = h.copy()
            buffer.running = z["memory/running"].copy()
    return dual, buffer
