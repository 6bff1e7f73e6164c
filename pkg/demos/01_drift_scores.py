"""
Which sensors changed?
======================

Two consecutive periods of a synthetic network, where a handful of old
sensors had their daily rhythm reshaped between them. We embed every
sensor with a freshly trained model, turn each embedding into a 10-bin
histogram and score each old sensor by how far its histogram moved.
The drifted sensors should float to the top of the ranking.

Run: python3 demos/01_drift_scores.py
"""

import numpy as np

from comemnet import SynthConfig, TrainConfig, VariantSpec, synth_generate
from comemnet.sampler import compute_period_features, score_nodes, select_nodes
from comemnet.trainer import new_state, train_period

# %% two periods, 30 sensors growing to 36, 30% of the old ones drift
net, ds = synth_generate(SynthConfig(periods=2, nodes=30, growth=6, drift=0.3, days=7, seed=3))
prev, cur = ds
drifted = set(cur.meta["drifted"])
print(f"{len(prev.sensor_ids)} -> {len(cur.sensor_ids)} sensors, {len(drifted)} drifted")

# %% fit the first period so the embeddings mean something
cfg = TrainConfig(epochs=8, hidden=32, node_dim=16, tod_dim=8, dow_dim=8, batch_size=32)
state = new_state(cfg, VariantSpec())
train_period(state, ds, 0, net)
state.dual.ensure_nodes(cur.sensor_ids)
target = state.dual.target

# %% hidden features of every sensor in both periods, from the slow branch
f_prev = compute_period_features(target, prev, sample_batches=8, batch_size=32, seed=0)
f_cur = compute_period_features(target, cur, sample_batches=8, batch_size=32, seed=0)
scores, _, _ = score_nodes(f_prev, prev.sensor_ids, f_cur, cur.sensor_ids, n_bins=10)

ranked = sorted(scores, key=lambda s: -scores[s])
print("\nrank  sensor   score   drifted?")
for r, s in enumerate(ranked[:12], 1):
    print(f"{r:4d}  {s:7s} {scores[s]:6.3f}   {'yes' if s in drifted else ''}")

# %% replay budget: floor(rho * N) old sensors plus every new one
rep = select_nodes(scores, cur.sensor_ids, prev.sensor_ids, rho=0.25)
hit = len(set(rep.replayed) & drifted)
print(f"\nreplaying {rep.M} old sensors, {hit} of them truly drifted "
      f"(chance level {rep.M * len(drifted) / len(prev.sensor_ids):.1f})")
print(f"training {len(rep.selected)} of {len(cur.sensor_ids)} sensors this epoch")

# %% mean score of drifted vs stable sensors
d = np.mean([scores[s] for s in drifted])
k = np.mean([scores[s] for s in scores if s not in drifted])
print(f"mean drift score: drifted {d:.3f}, stable {k:.3f}")
