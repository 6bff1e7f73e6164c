"""Forecast metrics, training paradigms/ablations, and forgetting matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError

HORIZON_STEPS = (3, 6, 12)
METRICS = ("MAE", "RMSE", "MAPE")
PARADIGMS = ("comemnet", "static", "retrained", "expansible")
MAPE_THRESHOLD = 1.0


@dataclass
class MetricRow:
    period: str
    horizon: str
    metric: str
    value: float | None
    nodes_total: int
    nodes_trained: int


def _mae_rmse_mape(pred, truth, mape_threshold):
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    mask = np.abs(truth) >= mape_threshold
    mape = float(np.mean(np.abs(err[mask]) / np.abs(truth[mask])) * 100.0) if mask.any() else None
    return {"MAE": mae, "RMSE": rmse, "MAPE": mape}


def compute_metrics(pred, truth, horizons: Sequence[int] = HORIZON_STEPS, period: str = "",
                    nodes_total: int | None = None, nodes_trained: int = 0,
                    mape_threshold: float = MAPE_THRESHOLD) -> list[MetricRow]:
    """MAE/RMSE/MAPE at point horizons and averaged over all steps.

    ``pred`` and ``truth`` are (windows, nodes, steps) in original units.
    MAPE is in percent and skips targets with |y| below ``mape_threshold``;
    it is ``None`` when every target is masked.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3:
        raise ConfigError(f"pred {pred.shape} / truth {truth.shape} must match as (W, N, T)")
    n_total = pred.shape[1] if nodes_total is None else nodes_total
    steps = pred.shape[2]
    rows = []
    tags = [(f"step-{h}", [h - 1]) for h in horizons if h <= steps]
    tags.append((f"avg-{steps}", list(range(steps))))
    for tag, cols in tags:
        vals = _mae_rmse_mape(pred[..., cols], truth[..., cols], mape_threshold)
        for m in METRICS:
            rows.append(MetricRow(period, tag, m, vals[m], n_total, nodes_trained))
    return rows


def per_node_mae(pred, truth) -> np.ndarray:
    """MAE of each node over all windows and steps."""
    return np.mean(np.abs(np.asarray(pred) - np.asarray(truth)), axis=(0, 2))


@dataclass(frozen=True)
class VariantSpec:
    """A training paradigm plus ablation switches for the full pipeline.

    The switches only apply to ``comemnet``:
    ``no_increase`` drops new nodes from the trained subset, ``no_replay``
    drops the replayed old nodes, ``no_tmrb`` zeroes the temporal prior,
    ``random_select`` picks the memory's key rows at random, and
    ``no_update`` uses the averaged features directly instead of the gate.
    """

    paradigm: str = "comemnet"
    no_increase: bool = False
    no_replay: bool = False
    no_tmrb: bool = False
    random_select: bool = False
    no_update: bool = False

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}; choose from {PARADIGMS}")
        flags = [f.name for f in fields(self) if f.name != "paradigm" and getattr(self, f.name)]
        if flags and self.paradigm != "comemnet":
            raise ConfigError(f"ablation flags {flags} only apply to the comemnet paradigm")
        if self.no_increase and self.no_replay:
            raise ConfigError("no_increase with no_replay leaves nothing to train")
        if self.no_tmrb and (self.random_select or self.no_update):
            raise ConfigError("no_tmrb already removes the memory; drop the other memory flags")

    @property
    def prior_mode(self) -> str:
        if self.no_tmrb:
            return "off"
        if self.no_update:
            return "no_update"
        if self.random_select:
            return "random_select"
        return "full"

    @property
    def name(self) -> str:
        flags = [f.name for f in fields(self) if f.name != "paradigm" and getattr(self, f.name)]
        return "+".join([self.paradigm] + flags)

    @classmethod
    def parse(cls, text: str) -> "VariantSpec":
        """``"static"``, ``"comemnet"``, or ``"comemnet+no_replay+no_tmrb"``; the
        paradigm may be omitted before flags (``"no_replay"``)."""
        parts = [p for p in text.replace(",", "+").split("+") if p]
        if not parts:
            raise ConfigError("empty variant")
        kw = {}
        if parts[0] in PARADIGMS:
            kw["paradigm"] = parts.pop(0)
        known = {f.name for f in fields(cls)} - {"paradigm"}
        for p in parts:
            key = p.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown variant flag {p!r}")
            kw[key] = True
        return cls(**kw)


def run_variant(spec: VariantSpec, datasets, config, network=None, run_id: str = "run"):
    """Run one paradigm/ablation over all periods; returns the RunState."""
    from .trainer import run_continual

    if spec.paradigm == "expansible" and network is None:
        raise ConfigError("the expansible paradigm needs the network adjacency")
    return run_continual(datasets, config, variant=spec, network=network, run_id=run_id)


def run_variants(specs: Sequence[VariantSpec], datasets, config, network=None,
                 run_id: str = "run") -> dict[str, object]:
    """Run several variants, training the first period once per memory mode.

    Every paradigm and flag trains the first period on all nodes, so runs
    sharing a prior mode are bit-identical up to there and can fork.
    """
    from .trainer import continue_run, fork_state, new_state, train_period
    from .data import make_network

    if network is None:
        network = make_network(datasets)
    firsts, out = {}, {}
    for spec in specs:
        base = firsts.get(spec.prior_mode)
        if base is None:
            base = new_state(config, spec, run_id)
            train_period(base, datasets, 0, network)
            firsts[spec.prior_mode] = base
        out[spec.name] = continue_run(fork_state(base, spec), datasets, network)
    return out


def forgetting_report(state) -> list[list[float]]:
    """Lower-triangular test-MAE matrix: row i = after training period i."""
    if not state.forgetting:
        raise ConfigError("run was made without forgetting evaluation")
    n = len(state.summaries)
    return [[state.forgetting[(i, j)] for j in range(i + 1)] for i in range(n)]


def backward_transfer(matrix: Sequence[Sequence[float]]) -> float:
    """Mean over old periods of (final MAE - MAE right after training it).

    Positive values mean the old periods got worse (forgetting).
    """
    last = len(matrix) - 1
    if last == 0:
        return 0.0
    return float(np.mean([matrix[last][j] - matrix[j][j] for j in range(last)]))


def is_consistent(rows: Sequence[MetricRow]) -> bool:
    """RMSE >= MAE for every (period, horizon) pair in ``rows``."""
    by = {}
    for r in rows:
        by.setdefault((r.period, r.horizon), {})[r.metric] = r.value
    return all(
        v["RMSE"] >= v["MAE"] - 1e-12 * max(1.0, abs(v["MAE"]))
        for v in by.values() if "RMSE" in v and "MAE" in v
    ) and all(r.value is None or math.isfinite(r.value) for r in rows)
