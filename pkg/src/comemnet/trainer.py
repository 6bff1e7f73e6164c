"""Continual training loop over expanding periods."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import BackboneConfig, ForecastBatch, forward
from .branches import DualBranchModel
from .data import ExpandingNetwork, PeriodDataset, make_network
from .errors import ConfigError, DivergenceError
from .evaluation import VariantSpec, compute_metrics, per_node_mae
from .numeric import Tape
from .sampler import (SamplerReport, compute_period_features, dump_reports, score_nodes,
                      select_nodes)
from .tmrb import TemporalMemoryBuffer, temporal_prior

log = logging.getLogger(__name__)

METRICS_HEADER = ["run_id", "variant", "period", "horizon", "metric", "value",
                  "nodes_total", "nodes_trained"]


@dataclass
class TrainConfig:
    """Defaults are the PEMS training settings; every field can be overridden from JSON."""

    t_h: int = 12
    t_f: int = 12
    batch_size: int = 128
    lr: float = 0.01
    epochs: int = 50
    beta: float = 0.99
    lr_decay: float = 0.5
    lr_patience: int = 5
    rho: float = 0.05
    K: int = 12
    n_bins: int = 10
    patience: int = 10
    seed: int = 0
    sampler_mode: str = "paper"
    bin_weights: list | None = None
    sampler_batches: int = 4
    sampler_batch_size: int = 32
    ema_every_steps: int = 1
    weight_decay: float = 1e-4
    layers: int = 3
    hidden: int = 64
    node_dim: int = 32
    tod_dim: int = 16
    dow_dim: int = 16
    eval_batch_size: int = 128
    forgetting: bool = False
    retrained_cumulative: bool = True
    mape_threshold: float = 1.0

    def __post_init__(self):
        positive = ["t_h", "t_f", "batch_size", "epochs", "K", "n_bins", "patience",
                    "lr_patience", "sampler_batches", "sampler_batch_size", "ema_every_steps",
                    "layers", "hidden", "node_dim", "tod_dim", "dow_dim", "eval_batch_size"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr must be positive and lr_decay in (0, 1]")
        if not 0 <= self.rho <= 1 or not 0 <= self.beta <= 1:
            raise ConfigError("rho and beta must lie in [0, 1]")
        if self.sampler_mode not in ("paper", "cdf_w1"):
            raise ConfigError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.bin_weights is not None and len(self.bin_weights) != self.n_bins:
            raise ConfigError("bin_weights needs one weight per bin")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.t_h, self.t_f, self.layers, self.hidden, self.node_dim,
                              self.tod_dim, self.dow_dim)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunState:
    dual: DualBranchModel
    buffer: TemporalMemoryBuffer
    config: TrainConfig
    variant: VariantSpec = field(default_factory=VariantSpec)
    run_id: str = "run"
    reports: dict[str, list[SamplerReport]] = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    summaries: list[dict] = field(default_factory=list)
    forgetting: dict = field(default_factory=dict)
    best_val: dict[str, float] = field(default_factory=dict)


def subset_mae_loss(pred, truth) -> float:
    """Mean absolute error over every element of the trained subset."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.size == 0:
        raise ConfigError("loss over an empty node subset")
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def new_model(cfg: TrainConfig, seed: int) -> DualBranchModel:
    return DualBranchModel(cfg.backbone, seed=seed, beta=cfg.beta, lr=cfg.lr,
                           weight_decay=cfg.weight_decay)


def new_state(cfg: TrainConfig, variant: VariantSpec | None = None, run_id: str = "run") -> RunState:
    return RunState(new_model(cfg, cfg.seed), TemporalMemoryBuffer(cfg.backbone.prior_dim, cfg.K),
                    cfg, variant or VariantSpec(), run_id)


# -- prediction ------------------------------------------------------------------


def eval_prior(params, batch: ForecastBatch, h_prev, cfg: TrainConfig, mode: str):
    """Prior used outside training: the period's memory vector itself."""
    if mode == "off":
        return None
    return np.asarray(h_prev, dtype=np.float64).reshape(1, -1)


def predict(params, ds: PeriodDataset, split: str, cfg: TrainConfig, h_prev, mode: str,
            nodes: Sequence[str] | None = None):
    """(pred, truth) in original units, each (windows, nodes, t_f)."""
    nodes = list(ds.sensor_ids if nodes is None else nodes)
    win = ds.windows(split, cfg.t_h, cfg.t_f)
    cols = ds.columns(nodes)
    sc = ds.scaler
    preds = []
    for lo in range(0, len(win), cfg.eval_batch_size):
        w = win.take(slice(lo, lo + cfg.eval_batch_size), cols)
        batch = ForecastBatch(sc.transform(w.x), nodes, w.tod, w.dow)
        out = forward(Tape(), params, batch, eval_prior(params, batch, h_prev, cfg, mode)).value
        preds.append(out.reshape(w.x.shape[0], len(nodes), cfg.t_f))
    pred = np.concatenate(preds) if preds else np.zeros((0, len(nodes), cfg.t_f))
    return sc.inverse(pred), win.y[:, cols]


def val_mae(state: RunState, ds: PeriodDataset, h_prev) -> float:
    cfg = state.config
    pred, truth = predict(state.dual.online, ds, "val", cfg, h_prev, state.variant.prior_mode)
    return float(np.mean(np.abs(pred - truth)))


# -- node selection ----------------------------------------------------------------


def two_hop(network: ExpandingNetwork, i: int, seeds: Sequence[str]) -> list[str]:
    """``seeds`` plus every node within two hops on the binary adjacency support."""
    g = network.periods[i]
    a = (g.adjacency > 0).astype(np.int64)
    pos = {s: k for k, s in enumerate(g.sensor_ids)}
    reach = np.zeros(len(g.sensor_ids), dtype=bool)
    reach[[pos[s] for s in seeds]] = True
    for _ in range(2):
        reach = reach | (a[:, reach].sum(axis=1) > 0)
    return [s for s, r in zip(g.sensor_ids, reach) if r]


def sampler_select(state: RunState, datasets, i: int, epoch: int) -> SamplerReport:
    cfg = state.config
    ds, prev = datasets[i], datasets[i - 1]
    target = state.dual.target
    mode = state.variant.prior_mode
    seed = cfg.seed * 1_000_003 + i * 1009 + epoch

    def feats(d, h_prev):
        return compute_period_features(
            target, d, d.sensor_ids, cfg.sampler_batches, cfg.sampler_batch_size, seed,
            prior=lambda b: eval_prior(target, b, h_prev, cfg, mode))

    f_prev = feats(prev, state.buffer.memory_for(prev.name))
    f_cur = feats(ds, state.buffer.running)
    scores, h_prev, h_cur = score_nodes(f_prev, prev.sensor_ids, f_cur, ds.sensor_ids,
                                        cfg.n_bins, cfg.sampler_mode, cfg.bin_weights)
    rep = select_nodes(scores, ds.sensor_ids, prev.sensor_ids, cfg.rho, ds.name, epoch)
    pos_prev = {s: k for k, s in enumerate(prev.sensor_ids)}
    pos_cur = {s: k for k, s in enumerate(ds.sensor_ids)}
    rep.histograms = {
        s: {"previous": h_prev[pos_prev[s]].tolist(), "current": h_cur[pos_cur[s]].tolist()}
        for s in rep.replayed
    }
    return rep


def training_nodes(state: RunState, datasets, i: int, epoch: int,
                   network: ExpandingNetwork | None) -> tuple[list[str], SamplerReport | None]:
    v = state.variant
    ds = datasets[i]
    if i == 0 or v.paradigm == "retrained":
        return list(ds.sensor_ids), None
    prev = set(datasets[i - 1].sensor_ids)
    new = [s for s in ds.sensor_ids if s not in prev]
    if v.paradigm == "expansible":
        return (two_hop(network, i, new) if new else []), None
    rep = sampler_select(state, datasets, i, epoch)
    if v.no_increase:
        rep.selected = [s for s in rep.selected if s not in set(new)]
    if v.no_replay:
        rep.selected = [s for s in rep.selected if s in set(new)]
    return rep.selected, rep


# -- training ------------------------------------------------------------------------


def _batches(ds: PeriodDataset, nodes, cfg: TrainConfig, rng):
    win = ds.windows("train", cfg.t_h, cfg.t_f)
    cols = ds.columns(nodes)
    order = rng.permutation(len(win))
    sc = ds.scaler
    for lo in range(0, len(order), cfg.batch_size):
        w = win.take(np.sort(order[lo:lo + cfg.batch_size]), cols)
        yield ForecastBatch(sc.transform(w.x), list(nodes), w.tod, w.dow), sc.transform(w.y)


def _snapshot(state: RunState) -> dict:
    return {"online": state.dual.online.copy(), "target": state.dual.target.copy(),
            "buffer": state.buffer.snapshot()}


def _restore(state: RunState, snap: dict) -> None:
    state.dual.online = snap["online"].copy()
    state.dual.target = snap["target"].copy()
    state.buffer.restore(snap["buffer"])


def train_period(state: RunState, datasets: Sequence[PeriodDataset], i: int,
                 network: ExpandingNetwork | None = None) -> dict:
    """Train period ``i`` (0-based) and evaluate it on its test split."""
    cfg, v = state.config, state.variant
    ds = datasets[i]
    t0 = time.perf_counter()
    if v.paradigm == "retrained" and i > 0:
        state.dual = new_model(cfg, cfg.seed + 7919 * i)
        state.buffer.running = np.zeros(state.buffer.dim)
    state.dual.ensure_nodes(ds.sensor_ids)
    mode = v.prior_mode
    summary = {"period": ds.name, "index": i, "nodes_total": len(ds.sensor_ids),
               "epochs_run": 0, "nodes_per_epoch": [], "val_mae": [], "lr": []}
    trained: set[str] = set()
    reports: list[SamplerReport] = []

    frozen = v.paradigm == "static" and i > 0
    if not frozen:
        rng = np.random.default_rng([cfg.seed, i])
        sel_rng = np.random.default_rng([cfg.seed, i, 99])
        state.dual.lr = cfg.lr
        best, best_snap, since_best, since_lr = np.inf, None, 0, 0
        step = 0
        for epoch in range(cfg.epochs):
            nodes, rep = training_nodes(state, datasets, i, epoch, network)
            if rep is not None:
                reports.append(rep)
            summary["nodes_per_epoch"].append(len(nodes))
            if not nodes:
                break
            trained |= set(nodes)
            if v.paradigm == "retrained" and cfg.retrained_cumulative:
                sources = [(datasets[j], list(datasets[j].sensor_ids)) for j in range(i + 1)]
            else:
                sources = [(ds, nodes)]
            batches = [b for d, n in sources for b in _batches(d, n, cfg, rng)]
            for k in rng.permutation(len(batches)):
                batch, y = batches[k]
                holder = {}

                def prior(tape, params, batch=batch):
                    h = temporal_prior(tape, params, batch.tod, batch.dow, len(batch.nodes),
                                       state.buffer.running, cfg.K, mode, sel_rng)
                    holder["h"] = h
                    return h

                try:
                    state.dual.online_step(batch, y, prior)
                except DivergenceError:
                    log.error("%s epoch %d diverged", ds.name, epoch)
                    raise
                if holder.get("h") is not None:
                    state.buffer.update(holder["h"])
                step += 1
                if step % cfg.ema_every_steps == 0:
                    state.dual.ema_update()
            summary["epochs_run"] = epoch + 1
            summary["lr"].append(state.dual.lr)
            val = val_mae(state, ds, state.buffer.running)
            summary["val_mae"].append(val)
            if val < best:
                best, best_snap, since_best, since_lr = val, _snapshot(state), 0, 0
            else:
                since_best += 1
                since_lr += 1
                if since_lr >= cfg.lr_patience:
                    state.dual.lr *= cfg.lr_decay
                    since_lr = 0
                if since_best >= cfg.patience:
                    break
        if best_snap is not None:
            _restore(state, best_snap)
            state.best_val[ds.name] = best
    state.buffer.commit_period(ds.name)
    if reports:
        state.reports[ds.name] = reports

    pred, truth = predict(state.dual.online, ds, "test", cfg, state.buffer.memory_for(ds.name), mode)
    rows = compute_metrics(pred, truth, period=ds.name, nodes_total=len(ds.sensor_ids),
                           nodes_trained=len(trained), mape_threshold=cfg.mape_threshold)
    state.metrics.extend(rows)
    summary.update({
        "nodes_trained": len(trained),
        "best_val_mae": state.best_val.get(ds.name),
        "test": {f"{r.horizon}/{r.metric}": r.value for r in rows},
        "node_mae": dict(zip(ds.sensor_ids, per_node_mae(pred, truth).tolist())),
        "seconds": round(time.perf_counter() - t0, 3),
    })
    if cfg.forgetting:
        for j in range(i + 1):
            if j == i:
                mae = float(np.mean(np.abs(pred - truth)))
            else:
                d = datasets[j]
                p, t = predict(state.dual.online, d, "test", cfg, state.buffer.memory_for(d.name), mode)
                mae = float(np.mean(np.abs(p - t)))
            state.forgetting[(i, j)] = mae
    state.summaries.append(summary)
    log.info("%s %s: trained %d/%d nodes, test MAE %.3f", v.name, ds.name, len(trained),
             len(ds.sensor_ids), summary["test"][f"avg-{cfg.t_f}/MAE"])
    return summary


def run_continual(datasets: Sequence[PeriodDataset], config: TrainConfig,
                  variant: VariantSpec | None = None, network: ExpandingNetwork | None = None,
                  run_id: str = "run") -> RunState:
    """Train sequentially over every period and collect metrics and reports."""
    if not datasets:
        raise ConfigError("need at least one period")
    if network is None:
        network = make_network(datasets)
    state = new_state(config, variant, run_id)
    return continue_run(state, datasets, network)


def continue_run(state: RunState, datasets: Sequence[PeriodDataset],
                 network: ExpandingNetwork | None = None) -> RunState:
    """Train the periods after the last one ``state`` has finished."""
    if network is None:
        network = make_network(datasets)
    for i in range(len(state.summaries), len(datasets)):
        train_period(state, datasets, i, network)
    return state


def fork_state(state: RunState, variant: VariantSpec, run_id: str | None = None) -> RunState:
    """Independent deep copy of ``state`` that continues as ``variant``."""
    twin = copy.deepcopy(state)
    twin.variant = variant
    if run_id is not None:
        twin.run_id = run_id
    return twin


# -- outputs ------------------------------------------------------------------------


def metrics_csv(state: RunState) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in state.metrics:
        w.writerow([state.run_id, state.variant.name, r.period, r.horizon, r.metric,
                    "" if r.value is None else repr(r.value), r.nodes_total, r.nodes_trained])
    return buf.getvalue()


def forgetting_csv(state: RunState) -> str:
    names = [s["period"] for s in state.summaries]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trained_through"] + names)
    for i, row_name in enumerate(names):
        w.writerow([row_name] + [repr(state.forgetting[(i, j)]) if j <= i else ""
                                 for j in range(len(names))])
    return buf.getvalue()


def write_run(state: RunState, out_dir) -> Path:
    """Write metrics, summaries, sampler reports, memory and checkpoint into ``out_dir``."""
    from .checkpoint import save_checkpoint

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(
        {"config": state.config.to_dict(), "variant": asdict(state.variant), "run_id": state.run_id},
        indent=2, sort_keys=True) + "\n")
    (out / "metrics.csv").write_text(metrics_csv(state))
    summaries = [{k: v for k, v in s.items() if k != "seconds"} for s in state.summaries]
    (out / "summary.json").write_text(json.dumps(summaries, indent=1, sort_keys=True) + "\n")
    reports = [r for p in state.summaries for r in state.reports.get(p["period"], [])]
    (out / "sampler_reports.json").write_text(dump_reports(reports) + "\n")
    (out / "memory.json").write_text(state.buffer.dumps() + "\n")
    if state.forgetting:
        (out / "forgetting.csv").write_text(forgetting_csv(state))
    save_checkpoint(out / "checkpoint.npz", state.dual, state.buffer)
    return out
