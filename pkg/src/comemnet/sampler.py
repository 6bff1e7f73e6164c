"""Drift-driven node selection between consecutive periods.

Target-branch features of every node are min-max scaled per period,
binned into ``n`` uniform intervals, and each old node is scored by how far
its binned distribution moved. The ``M = floor(rho * N)`` highest scorers are
replayed alongside all new nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .backbone import BackboneParams, ForecastBatch, encode_features
from .data import PeriodDataset
from .errors import ConfigError

MODES = ("paper", "cdf_w1")


def normalize_features(f) -> np.ndarray:
    """Whole-matrix min-max scaling to [0, 1]; a constant matrix maps to zeros."""
    f = np.asarray(f, dtype=np.float64)
    lo, hi = f.min(initial=np.inf), f.max(initial=-np.inf)
    if not hi > lo:
        return np.zeros_like(f)
    return (f - lo) / (hi - lo)


def histogram(p, n: int = 10) -> np.ndarray:
    """Fraction of ``p`` in each of ``n`` bins [i/n, (i+1)/n), last bin closed."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if n < 1:
        raise ConfigError("need at least one bin")
    if p.size == 0:
        return np.zeros(n)
    edges = np.linspace(0.0, 1.0, n + 1)
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n - 1)
    return np.bincount(idx, minlength=n) / p.size


def histograms(p_matrix, n: int = 10) -> np.ndarray:
    """Row-wise :func:`histogram` of an (N, C) matrix."""
    return np.array([histogram(row, n) for row in np.asarray(p_matrix)]).reshape(-1, n)


def drift_score(h_prev, h_cur, weights=None, mode: str = "paper") -> float:
    """Distance between two binned distributions.

    ``paper``: sum_i c_i |h_prev_i - h_cur_i| (weights default to 1).
    ``cdf_w1``: 1-D Wasserstein-1 on bin centres spaced 1/n apart, i.e.
    the mean absolute difference of the two CDFs.
    """
    a = np.asarray(h_prev, dtype=np.float64)
    b = np.asarray(h_cur, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"histogram length mismatch {a.shape} vs {b.shape}")
    if mode == "paper":
        c = np.ones_like(a) if weights is None else np.asarray(weights, dtype=np.float64)
        if c.shape != a.shape:
            raise ConfigError(f"{c.size} weights for {a.size} bins")
        return float(np.sum(c * np.abs(a - b)))
    if mode == "cdf_w1":
        return float(np.sum(np.abs(np.cumsum(a) - np.cumsum(b))) / a.size)
    raise ConfigError(f"unknown drift mode {mode!r}; choose from {MODES}")


@dataclass
class SamplerReport:
    period: str
    scores: dict[str, float]
    selected: list[str]
    new_nodes: list[str]
    M: int
    rho: float
    epoch: int = 0
    histograms: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    @property
    def replayed(self) -> list[str]:
        new = set(self.new_nodes)
        return [s for s in self.selected if s not in new]

    def to_json(self) -> dict:
        return asdict(self)


def replay_budget(n_current: int, rho: float) -> int:
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    # guard against e.g. 100 * 0.29 == 28.999999999999996
    return int(math.floor(n_current * rho + 1e-9))


def top_by_score(scores: Mapping[str, float], m: int) -> list[str]:
    """The ``m`` highest-scoring IDs; equal scores go to the smaller ID."""
    return [s for s, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:max(m, 0)]]


def select_nodes(scores: Mapping[str, float], current: Sequence[str], previous: Sequence[str],
                 rho: float, period: str = "", epoch: int = 0) -> SamplerReport:
    """Top-M drifted old nodes plus every node new in ``current``.

    The selection is returned in the current period's node order.
    """
    prev = set(previous)
    if set(scores) != prev:
        raise ConfigError("scores must cover exactly the previous period's nodes")
    m = replay_budget(len(current), rho)
    top = set(top_by_score(scores, m))
    new = [s for s in current if s not in prev]
    chosen = top | set(new)
    return SamplerReport(
        period=period, scores={k: float(v) for k, v in scores.items()},
        selected=[s for s in current if s in chosen], new_nodes=new, M=m, rho=rho, epoch=epoch,
    )


def score_nodes(f_prev: np.ndarray, ids_prev: Sequence[str], f_cur: np.ndarray,
                ids_cur: Sequence[str], n_bins: int = 10, mode: str = "paper",
                weights=None) -> tuple[dict[str, float], np.ndarray, np.ndarray]:
    """Score every node of the previous period.

    Each period's feature matrix is normalized on its own; returns the scores
    plus both histogram matrices (rows follow ``ids_prev`` / ``ids_cur``).
    """
    h_prev = histograms(normalize_features(f_prev), n_bins)
    h_cur = histograms(normalize_features(f_cur), n_bins)
    pos = {s: i for i, s in enumerate(ids_cur)}
    scores = {
        s: drift_score(h_prev[i], h_cur[pos[s]], weights, mode) for i, s in enumerate(ids_prev)
    }
    return scores, h_prev, h_cur


def compute_period_features(
    params: BackboneParams,
    dataset: PeriodDataset,
    nodes: Sequence[str] | None = None,
    sample_batches: int = 4,
    batch_size: int = 32,
    seed: int = 0,
    prior: Callable[[ForecastBatch], np.ndarray | None] | None = None,
) -> np.ndarray:
    """Mean encoder features per node over seeded training-split batches.

    ``params`` should be the target branch. Windows are shuffled with ``seed``
    and cut into batches of ``batch_size``; the first ``sample_batches`` are
    used, every window weighted equally. Returns (len(nodes), hidden).
    """
    nodes = list(dataset.sensor_ids if nodes is None else nodes)
    cfg = params.cfg
    win = dataset.windows("train", cfg.t_h, cfg.t_f)
    if len(win) == 0:
        raise ConfigError(f"{dataset.name}: empty training split")
    order = np.random.default_rng(seed).permutation(len(win))
    order = order[: sample_batches * batch_size]
    cols = dataset.columns(nodes)
    sc = dataset.scaler
    total = np.zeros((len(nodes), cfg.hidden))
    for lo in range(0, len(order), batch_size):
        idx = np.sort(order[lo:lo + batch_size])
        w = win.take(idx, cols)
        batch = ForecastBatch(sc.transform(w.x), nodes, w.tod, w.dow)
        h_prior = prior(batch) if prior is not None else None
        total += encode_features(params, batch, h_prior) * len(idx)
    return total / len(order)


def dump_reports(reports: Sequence[SamplerReport]) -> str:
    return json.dumps([r.to_json() for r in reports], sort_keys=True, indent=1)
