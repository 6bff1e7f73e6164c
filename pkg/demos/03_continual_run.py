"""
A small continual run
=====================

Four periods of a growing, drifting network. We compare the full method
against a frozen model (static), against training only the new sensors
(no_replay) and against the memory switched off (no_tmrb), then write
a run directory and render its report.

Takes about a minute on one core.

Run: python3 demos/03_continual_run.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from comemnet import (SynthConfig, TrainConfig, VariantSpec, backward_transfer, forgetting_report,
                      run_variants, synth_generate, write_run)
from comemnet.report import write_report

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")

net, ds = synth_generate(SynthConfig(periods=4, nodes=30, growth=8, drift=0.3, days=10, seed=0))
print("sensors per period:", [len(d.sensor_ids) for d in ds])

cfg = TrainConfig(epochs=10, hidden=32, node_dim=16, tod_dim=8, dow_dim=8, batch_size=32,
                  rho=0.1, forgetting=True)
specs = [VariantSpec.parse(v) for v in ("comemnet", "static", "no_replay", "no_tmrb")]
runs = run_variants(specs, ds, cfg, net)

# %% final-period error, error on the sensors that drifted last, and forgetting
drifted = ds[-1].meta["drifted"]
print(f"\n{'variant':22s} {'MAE':>7s} {'drifted':>8s} {'BWT':>7s}  trained per period")
for name, st in runs.items():
    fin = st.summaries[-1]
    dm = np.mean([fin["node_mae"][s] for s in drifted])
    bwt = backward_transfer(forgetting_report(st))
    trained = [s["nodes_trained"] for s in st.summaries]
    print(f"{name:22s} {fin['test']['avg-12/MAE']:7.3f} {dm:8.3f} {bwt:7.3f}  {trained}")

# %% every later period trains a fraction of the network
full = runs["comemnet"]
for s in full.summaries[1:]:
    print(f"{s['period']}: {s['nodes_per_epoch'][0]} of {s['nodes_total']} sensors per epoch")

write_run(full, out)
for f in write_report(out):
    print("wrote", f)
