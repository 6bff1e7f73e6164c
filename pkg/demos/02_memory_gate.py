"""
Inside the temporal memory
==========================

The memory keeps one small vector H summarising "what time looks like"
for the current period. Each training batch proposes an update:

1. stack the time-of-day and day-of-week embeddings of the batch rows
2. keep the K rows that differ most (L1) from the current H
3. average them through a learned matrix W
4. blend that with H through a GRU-style gate

This script walks one update by hand and checks it against the library.

Run: python3 demos/02_memory_gate.py
"""

import numpy as np

from comemnet import BackboneConfig, BackboneParams, Tape
from comemnet.tmrb import (TemporalMemoryBuffer, delta, gated_update, temporal_prior,
                           time_features, topk_nodes)

np.set_printoptions(precision=3, suppress=True)

cfg = BackboneConfig(tod_dim=3, dow_dim=2)
params = BackboneParams(cfg, seed=0)
params.ensure_nodes(["a", "b", "c"])

# a batch of four windows at different hours and days, three sensors each
tod = np.array([8 * 12, 12 * 12, 17 * 12, 23 * 12])
dow = np.array([0, 2, 4, 6])
rows = time_features(params, tod, dow, n_nodes=3)
print("time feature rows:", rows.shape)

buf = TemporalMemoryBuffer(cfg.prior_dim, k=4)
h = buf.running
d = delta(rows, h)
keep = topk_nodes(d, 4)
print("L1 distance to H:", d)
print("kept rows:", keep)

# %% by hand
w = params["tmrb.w"].value
h_a = rows[keep].mean(axis=0, keepdims=True) @ w
by_hand = gated_update(Tape(), h, h_a, params["tmrb.w_r"].value, params["tmrb.w_z"].value,
                       params["tmrb.w_t"].value).value

# %% through the library, as the trainer calls it
lib = temporal_prior(Tape(), params, tod, dow, 3, h, k=4).value
print("\nH after the gate (by hand):", by_hand[0])
print("H after the gate (library):", lib[0])
assert np.allclose(by_hand, lib, atol=1e-14)

# %% the buffer keeps the running vector and freezes one per period
buf.update(lib)
buf.commit_period("year-1")
print("\ncommitted:", {k: v for k, v in buf.store.items()})

# %% gating limits: zero matrices make every gate 1/2 and the candidate 0
z = np.zeros((2 * cfg.prior_dim, cfg.prior_dim))
half = gated_update(Tape(), h, h_a, z, z, z).value
print("zero gates give H_a / 2:", np.allclose(half, h_a / 2, atol=1e-12))
