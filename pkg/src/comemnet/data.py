"""Expanding sensor networks, per-period flow datasets, ingestion and synthesis.

Node identity is always the global sensor ID string. Positional indices
(rows of an adjacency matrix, columns of a flow matrix) are per period and
only meaningful together with that period's ``sensor_ids``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

STEPS_PER_DAY = 288
DAYS_PER_WEEK = 7
SPLIT_RATIOS = (0.6, 0.2, 0.2)


@dataclass
class PeriodGraph:
    name: str
    sensor_ids: list[str]
    edges: list[tuple[str, str]]
    adjacency: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.sensor_ids)


@dataclass
class ExpandingNetwork:
    periods: list[PeriodGraph]

    def __post_init__(self):
        for prev, cur in zip(self.periods, self.periods[1:]):
            missing = set(prev.sensor_ids) - set(cur.sensor_ids)
            if missing:
                raise ConfigError(
                    f"period {cur.name} drops {len(missing)} sensors of {prev.name}; "
                    "networks may only expand"
                )

    def new_nodes(self, i: int) -> list[str]:
        """Sensors of period ``i`` absent from period ``i-1`` (all of them for i=0)."""
        if i == 0:
            return list(self.periods[0].sensor_ids)
        prev = set(self.periods[i - 1].sensor_ids)
        return [s for s in self.periods[i].sensor_ids if s not in prev]


class Windows(NamedTuple):
    """Stacked sliding windows. x: (W, N, T_h), y: (W, N, T_f), tod/dow: (W,)."""

    x: np.ndarray
    y: np.ndarray
    tod: np.ndarray
    dow: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx, cols=None) -> "Windows":
        x, y = self.x[idx], self.y[idx]
        if cols is not None:
            x, y = x[:, cols], y[:, cols]
        return Windows(x, y, self.tod[idx], self.dow[idx])


@dataclass
class Scaler:
    """Single global z-score fitted on a period's training split."""

    mean: float
    std: float

    def transform(self, a):
        return (a - self.mean) / self.std

    def inverse(self, a):
        return a * self.std + self.mean


@dataclass
class PeriodDataset:
    """One period's cleaned flow (T × N, vehicles per interval) and derived windows."""

    name: str
    sensor_ids: list[str]
    flow: np.ndarray
    post_miles: np.ndarray | None = None
    start_dow: int = 0
    interval_minutes: int = 5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 2 or self.flow.shape[1] != len(self.sensor_ids):
            raise ConfigError(
                f"{self.name}: flow shape {self.flow.shape} vs {len(self.sensor_ids)} sensors"
            )
        if np.isnan(self.flow).any():
            raise ConfigError(f"{self.name}: flow still contains missing values")
        self._windows: dict = {}
        self._scaler: Scaler | None = None

    @property
    def n_steps(self) -> int:
        return self.flow.shape[0]

    @property
    def tod_index(self) -> np.ndarray:
        return time_of_day(self.n_steps, self.interval_minutes)

    @property
    def dow_index(self) -> np.ndarray:
        return day_of_week(self.n_steps, self.interval_minutes, self.start_dow)

    @property
    def splits(self) -> dict[str, range]:
        return split_ranges(self.n_steps)

    @property
    def scaler(self) -> Scaler:
        if self._scaler is None:
            tr = self.splits["train"]
            x = self.flow[tr.start:tr.stop]
            std = float(x.std())
            self._scaler = Scaler(float(x.mean()), std if std > 0 else 1.0)
        return self._scaler

    def windows(self, split: str, t_h: int = 12, t_f: int = 12) -> Windows:
        """Windows lying entirely inside ``split``, in original units (cached)."""
        key = (split, t_h, t_f)
        if key not in self._windows:
            r = self.splits[split]
            self._windows[key] = make_windows(
                self.flow[r.start:r.stop], t_h, t_f,
                tod=self.tod_index[r.start:r.stop], dow=self.dow_index[r.start:r.stop],
            )
        return self._windows[key]

    def columns(self, ids: Sequence[str]) -> np.ndarray:
        pos = {s: i for i, s in enumerate(self.sensor_ids)}
        return np.array([pos[s] for s in ids], dtype=np.intp)


def split_ranges(n: int) -> dict[str, range]:
    """Temporal 6:2:2 split; test takes the remainder."""
    n_train = int(math.floor(SPLIT_RATIOS[0] * n))
    n_val = int(math.floor(SPLIT_RATIOS[1] * n))
    return {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n),
    }


def time_of_day(n_steps: int, interval_minutes: int = 5) -> np.ndarray:
    per_day = 24 * 60 // interval_minutes
    slots = np.arange(n_steps) % per_day
    # map onto the 288 five-minute slots whatever the sampling interval
    return (slots * STEPS_PER_DAY // per_day).astype(np.intp)


def day_of_week(n_steps: int, interval_minutes: int = 5, start_dow: int = 0) -> np.ndarray:
    per_day = 24 * 60 // interval_minutes
    return ((np.arange(n_steps) // per_day + start_dow) % DAYS_PER_WEEK).astype(np.intp)


def make_windows(flow, t_h: int = 12, t_f: int = 12, tod=None, dow=None) -> Windows:
    """Stride-1 windows; tod/dow are taken at the last historical step."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim == 1:
        flow = flow[:, None]
    n_t, n = flow.shape
    count = n_t - t_h - t_f + 1
    if count <= 0:
        log.warning("series of length %d too short for %d+%d windows", n_t, t_h, t_f)
        e = np.zeros((0, n, t_h)), np.zeros((0, n, t_f))
        return Windows(*e, np.zeros(0, np.intp), np.zeros(0, np.intp))
    tod = time_of_day(n_t) if tod is None else np.asarray(tod)
    dow = day_of_week(n_t) if dow is None else np.asarray(dow)
    view = np.lib.stride_tricks.sliding_window_view(flow, t_h + t_f, axis=0)[:count]
    # view: (count, N, t_h + t_f)
    x = np.ascontiguousarray(view[:, :, :t_h])
    y = np.ascontiguousarray(view[:, :, t_h:])
    last = np.arange(count) + t_h - 1
    return Windows(x, y, tod[last].astype(np.intp), dow[last].astype(np.intp))


# -- curation --------------------------------------------------------------------


def filter_and_interpolate(raw, sensor_ids: Sequence[str], max_missing_rate: float = 0.10):
    """Drop sparse sensors and fill the remaining gaps.

    ``raw`` is T × N with NaN marking missing readings. Sensors whose missing
    fraction reaches ``max_missing_rate`` are dropped. Interior gaps are filled
    by linear interpolation, leading and trailing gaps by the nearest observation.

    Returns (clean flow, kept sensor IDs, dropped sensor IDs).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[1] != len(sensor_ids):
        raise ConfigError(f"{raw.shape[1]} columns but {len(sensor_ids)} sensor IDs")
    n_t = raw.shape[0]
    keep, dropped, cols = [], [], []
    t = np.arange(n_t)
    for j, sid in enumerate(sensor_ids):
        col = raw[:, j]
        observed = ~np.isnan(col)
        n_obs = int(observed.sum())
        if n_obs == 0:
            log.warning("sensor %s has no observations; dropped", sid)
            dropped.append(sid)
            continue
        if (n_t - n_obs) / n_t >= max_missing_rate:
            dropped.append(sid)
            continue
        # np.interp clamps to the end values outside the observed range
        cols.append(np.interp(t, t[observed], col[observed]))
        keep.append(sid)
    clean = np.stack(cols, axis=1) if cols else np.zeros((n_t, 0))
    return clean, keep, dropped


def enforce_continuity(sensor_sets: Sequence[Sequence[str]]) -> list[list[str]]:
    """Keep a sensor in period t only if it survives into period t+1.

    Applied from the last period backwards, so the result is monotone
    (each period's set is contained in the next). Order within a period is kept.
    """
    if not sensor_sets:
        raise ConfigError("no periods given")
    out: list[list[str]] = [list(sensor_sets[-1])]
    for ids in reversed(sensor_sets[:-1]):
        later = set(out[0])
        out.insert(0, [s for s in ids if s in later])
    for i, ids in enumerate(out):
        if not ids:
            raise ConfigError(f"period {i} is empty after the continuity rule")
    return out


def build_adjacency(post_miles, delta: float = 100.0, epsilon: float = 1.0) -> np.ndarray:
    """Gaussian kernel on post-mile distance, cut to zero at distance >= epsilon."""
    pm = np.asarray(post_miles, dtype=np.float64).ravel()
    d = np.abs(pm[:, None] - pm[None, :])
    a = np.where(d < epsilon, np.exp(-(d**2) / delta**2), 0.0)
    np.fill_diagonal(a, 0.0)
    return a


def edges_from_adjacency(adj: np.ndarray, ids: Sequence[str]) -> list[tuple[str, str]]:
    iu, ju = np.nonzero(np.triu(adj, k=1))
    return [(ids[i], ids[j]) for i, j in zip(iu, ju)]


def make_network(datasets: Sequence[PeriodDataset], delta: float = 100.0,
                 epsilon: float = 1.0) -> ExpandingNetwork:
    graphs = []
    for ds in datasets:
        if ds.post_miles is None:
            adj = np.zeros((len(ds.sensor_ids),) * 2)
        else:
            adj = build_adjacency(ds.post_miles, delta, epsilon)
        graphs.append(PeriodGraph(ds.name, list(ds.sensor_ids),
                                  edges_from_adjacency(adj, ds.sensor_ids), adj))
    return ExpandingNetwork(graphs)


# -- synthetic benchmark ---------------------------------------------------------


@dataclass
class SynthConfig:
    periods: int = 5
    nodes: int = 40
    growth: int = 10
    drift: float = 0.3
    days: int = 14
    noise: float = 0.03
    seed: int = 0


def _draw_profile(rng: np.random.Generator) -> dict:
    return {
        "level": rng.uniform(100.0, 300.0),
        "amp": rng.uniform(0.8, 1.6, size=2),
        # peak times (in slots) of the morning and evening rush
        "peak": np.array([rng.uniform(6.0, 10.0), rng.uniform(15.0, 19.5)]) * 12.0,
        "sharp": rng.uniform(15.0, 40.0, size=2),
        "weekend": rng.uniform(0.5, 0.8),
    }


def _profile_flow(p: dict, tod: np.ndarray, dow: np.ndarray) -> np.ndarray:
    """Base load plus two rush-hour bumps, each exp(kappa * (cos(daily phase) - 1))."""
    angle = 2 * np.pi * tod / STEPS_PER_DAY
    shape = 0.25 + sum(
        p["amp"][k] * np.exp(p["sharp"][k] * (np.cos(angle - 2 * np.pi * p["peak"][k] / STEPS_PER_DAY) - 1.0))
        for k in range(2)
    )
    week = np.where(dow >= 5, p["weekend"], 1.0)
    return p["level"] * shape * week


def synth_generate(cfg: SynthConfig):
    """Generate a drifting, expanding benchmark.

    Each node's daily profile is a base load plus two peaked periodic bumps
    (morning and evening rush, period 288 slots) whose timing, sharpness and
    height are node specific; weekends scale it down, Gaussian noise is added
    and flows are rounded to whole vehicles. At every period boundary
    ``cfg.drift`` of the existing nodes redraw level, amplitudes and phases.
    Returns ``(network, datasets)``; each dataset's ``meta`` lists the IDs
    that drifted entering that period under ``"drifted"``.
    """
    if cfg.periods < 1 or cfg.nodes < 1 or cfg.growth < 0 or not 0 <= cfg.drift <= 1:
        raise ConfigError(f"invalid synthetic config {cfg}")
    rng = np.random.default_rng(cfg.seed)
    n_steps = cfg.days * STEPS_PER_DAY
    tod = time_of_day(n_steps)
    dow = day_of_week(n_steps)

    ids: list[str] = []
    profiles: dict[str, dict] = {}
    miles: dict[str, float] = {}

    def add_nodes(k):
        for _ in range(k):
            sid = f"S{len(ids):04d}"
            ids.append(sid)
            profiles[sid] = _draw_profile(rng)
            miles[sid] = round(float(rng.uniform(0.0, 100.0)), 3)

    datasets = []
    for t in range(cfg.periods):
        drifted: list[str] = []
        if t == 0:
            add_nodes(cfg.nodes)
        else:
            n_drift = int(round(cfg.drift * len(ids)))
            if n_drift:
                drifted = sorted(rng.choice(ids, size=n_drift, replace=False).tolist())
                for sid in drifted:
                    profiles[sid] = _draw_profile(rng)
            add_nodes(cfg.growth)
        flow = np.empty((n_steps, len(ids)))
        for j, sid in enumerate(ids):
            clean = _profile_flow(profiles[sid], tod, dow)
            noisy = clean + rng.normal(0.0, cfg.noise * profiles[sid]["level"], n_steps)
            flow[:, j] = np.maximum(np.round(noisy), 0.0)
        datasets.append(PeriodDataset(
            name=f"P{t + 1}", sensor_ids=list(ids), flow=flow,
            post_miles=np.array([miles[s] for s in ids]),
            meta={"drifted": drifted},
        ))
    return make_network(datasets), datasets


# -- files -----------------------------------------------------------------------


@dataclass
class PeriodEntry:
    name: str
    flow_file: str
    sensors_file: str
    metadata_file: str
    interval_minutes: int = 5
    start_dow: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    periods: list[PeriodEntry]
    root: Path = Path(".")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        doc = json.loads(path.read_text())
        known = {"name", "flow_file", "sensors_file", "metadata_file", "interval_minutes", "start_dow"}
        entries = []
        for e in doc["periods"]:
            entries.append(PeriodEntry(
                **{k: v for k, v in e.items() if k in known},
                extra={k: v for k, v in e.items() if k not in known},
            ))
        man = cls(entries, path.parent)
        man.validate()
        return man

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def validate(self) -> None:
        if not self.periods:
            raise ConfigError("manifest lists no periods")
        for e in self.periods:
            for f in (e.flow_file, e.sensors_file, e.metadata_file):
                if not self.resolve(f).is_file():
                    raise FileNotFoundError(f"{e.name}: missing {f}")
            header = _read_flow_header(self.resolve(e.flow_file))
            listed = read_sensor_list(self.resolve(e.sensors_file))
            if len(header) != len(listed):
                raise ConfigError(
                    f"{e.name}: flow header has {len(header)} sensors, sensors file {len(listed)}"
                )

    def to_json(self) -> dict:
        out = []
        for e in self.periods:
            d = {"name": e.name, "flow_file": e.flow_file, "sensors_file": e.sensors_file,
                 "metadata_file": e.metadata_file, "interval_minutes": e.interval_minutes,
                 "start_dow": e.start_dow}
            d.update(e.extra)
            out.append(d)
        return {"periods": out}


def _read_flow_header(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def read_sensor_list(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def read_flow_csv(path) -> tuple[list[str], np.ndarray]:
    """Header row of sensor IDs, one row per interval; empty cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        ids = next(reader)
        rows = [[float(c) if c.strip() else np.nan for c in r] for r in reader if r]
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), len(ids))


def write_flow_csv(path, ids: Sequence[str], flow: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ids)
        for row in flow:
            w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])


def read_metadata_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {r["sensor_id"]: float(r["post_mile"]) for r in csv.DictReader(fh)}


def write_metadata_csv(path, ids: Sequence[str], post_miles) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "post_mile"])
        for s, m in zip(ids, post_miles):
            w.writerow([s, repr(float(m))])


def write_dataset(out_dir, datasets: Sequence[PeriodDataset]) -> Path:
    """Write flow/sensor/metadata files plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ds in datasets:
        flow_f, sens_f, meta_f = f"{ds.name}_flow.csv", f"{ds.name}_sensors.txt", f"{ds.name}_meta.csv"
        write_flow_csv(out_dir / flow_f, ds.sensor_ids, ds.flow)
        (out_dir / sens_f).write_text("\n".join(ds.sensor_ids) + "\n")
        pm = ds.post_miles if ds.post_miles is not None else np.zeros(len(ds.sensor_ids))
        write_metadata_csv(out_dir / meta_f, ds.sensor_ids, pm)
        entries.append(PeriodEntry(ds.name, flow_f, sens_f, meta_f, ds.interval_minutes,
                                   ds.start_dow, dict(ds.meta)))
    man = DatasetManifest(entries, out_dir)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(manifest, delta: float = 100.0, epsilon: float = 1.0):
    """Load a cleaned dataset; returns ``(network, datasets)``."""
    man = manifest if isinstance(manifest, DatasetManifest) else DatasetManifest.load(manifest)
    datasets = []
    for e in man.periods:
        ids, flow = read_flow_csv(man.resolve(e.flow_file))
        meta = read_metadata_csv(man.resolve(e.metadata_file))
        missing = [s for s in ids if s not in meta]
        if missing:
            raise ConfigError(f"{e.name}: no post-mile for {missing[:5]}")
        datasets.append(PeriodDataset(
            e.name, ids, flow, np.array([meta[s] for s in ids]),
            start_dow=e.start_dow, interval_minutes=e.interval_minutes, meta=dict(e.extra),
        ))
    return make_network(datasets, delta, epsilon), datasets


def ingest(manifest, out_dir, max_missing_rate: float = 0.10,
           max_post_mile: float | None = None) -> Path:
    """Curate raw per-period files into a cleaned dataset directory.

    Applies the missing-rate filter with interpolation, the optional
    post-mile cut, and the continuity rule, then writes the standard layout.
    """
    man = manifest if isinstance(manifest, DatasetManifest) else DatasetManifest.load(manifest)
    cleaned = []
    for e in man.periods:
        ids, raw = read_flow_csv(man.resolve(e.flow_file))
        meta = read_metadata_csv(man.resolve(e.metadata_file))
        flow, kept, dropped = filter_and_interpolate(raw, ids, max_missing_rate)
        if dropped:
            log.info("%s: dropped %d sparse sensors", e.name, len(dropped))
        keep_mask = [s in meta and (max_post_mile is None or meta[s] < max_post_mile) for s in kept]
        kept = [s for s, k in zip(kept, keep_mask) if k]
        flow = flow[:, np.array(keep_mask, dtype=bool)] if keep_mask else flow
        cleaned.append((e, kept, flow, meta))
    retained = enforce_continuity([c[1] for c in cleaned])
    datasets = []
    for (e, kept, flow, meta), ids in zip(cleaned, retained):
        cols = [kept.index(s) for s in ids]
        datasets.append(PeriodDataset(
            e.name, ids, flow[:, cols], np.array([meta[s] for s in ids]),
            start_dow=e.start_dow, interval_minutes=e.interval_minutes, meta=dict(e.extra),
        ))
    # later periods may order sensors differently; keep each period's own order
    make_network(datasets)
    return write_dataset(out_dir, datasets)
