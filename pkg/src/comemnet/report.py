"""Turn a finished run directory into CSV tables and standalone SVG plots.

Everything is assembled in memory first; files are only written once every
input has been read and validated, so a failed report leaves nothing behind.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ConfigError

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
W, H, PAD = 640, 360, 56


def _svg(body: list[str], title: str, width=W, height=H) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>',
                      f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">'
                      f'{escape(title)}</text>', *body, "</svg>"]) + "\n"


def _axes(ymin, ymax, ylabel):
    out = [f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>']
    for k in range(5):
        v = ymin + (ymax - ymin) * k / 4
        y = H - PAD - (H - 2 * PAD) * k / 4
        out.append(f'<text x="{PAD - 4}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return out


def line_chart(series: dict[str, list[float | None]], xlabels: list[str], title: str,
               ylabel: str) -> str:
    vals = [v for ys in series.values() for v in ys if v is not None]
    if not vals:
        raise ConfigError(f"nothing to plot for {title!r}")
    lo, hi = min(vals), max(vals)
    lo, hi = (lo - 1, hi + 1) if hi == lo else (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
    step = (W - 2 * PAD) / max(len(xlabels) - 1, 1)

    def xy(i, v):
        return PAD + i * step, H - PAD - (H - 2 * PAD) * (v - lo) / (hi - lo)

    body = _axes(lo, hi, ylabel)
    for i, lab in enumerate(xlabels):
        body.append(f'<text x="{PAD + i * step:.1f}" y="{H - PAD + 16}" '
                    f'text-anchor="middle">{escape(lab)}</text>')
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = [xy(i, v) for i, v in enumerate(ys) if v is not None]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="'
                    + " ".join(f"{x:.1f},{y:.1f}" for x, y in pts) + '"/>')
        body += [f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>' for x, y in pts]
        body.append(f'<text x="{W - PAD + 4}" y="{PAD + 14 * k}" fill="{color}">{escape(name)}</text>')
    return _svg(body, title)


def histogram_chart(hists: dict[str, dict[str, list[float]]], title: str) -> str:
    """Grouped bars, previous vs current period, one panel per node."""
    nodes = list(hists)
    if not nodes:
        raise ConfigError("no histograms to plot")
    panel_h = 150
    height = PAD + panel_h * len(nodes)
    body = []
    for r, node in enumerate(nodes):
        prev, cur = hists[node]["previous"], hists[node]["current"]
        n = len(prev)
        top = PAD + r * panel_h
        base = top + panel_h - 30
        bw = (W - 2 * PAD) / n
        body.append(f'<text x="{PAD}" y="{top + 4}">{escape(node)}</text>')
        body.append(f'<line x1="{PAD}" y1="{base}" x2="{W - PAD}" y2="{base}" stroke="black"/>')
        for i in range(n):
            for k, v in enumerate((prev[i], cur[i])):
                hgt = (panel_h - 45) * v
                x = PAD + i * bw + k * bw * 0.42 + bw * 0.08
                body.append(f'<rect x="{x:.1f}" y="{base - hgt:.1f}" width="{bw * 0.4:.1f}" '
                            f'height="{hgt:.1f}" fill="{PALETTE[k]}"/>')
            body.append(f'<text x="{PAD + (i + 0.5) * bw:.1f}" y="{base + 14}" '
                        f'text-anchor="middle">{i}/{n}</text>')
    body.append(f'<text x="{W - PAD}" y="{PAD - 20}" fill="{PALETTE[0]}" text-anchor="end">previous</text>')
    body.append(f'<text x="{W - PAD}" y="{PAD - 8}" fill="{PALETTE[1]}" text-anchor="end">current</text>')
    return _svg(body, title, height=height)


def heatmap(matrix: list[list[float | None]], rows: list[str], cols: list[str], title: str) -> str:
    vals = [v for row in matrix for v in row if v is not None]
    if not vals:
        raise ConfigError("empty forgetting matrix")
    lo, hi = min(vals), max(vals)
    cw = (W - 2 * PAD) / len(cols)
    ch = (H - 2 * PAD) / len(rows)
    body = []
    for i, row in enumerate(matrix):
        body.append(f'<text x="{PAD - 4}" y="{PAD + (i + 0.5) * ch + 4:.1f}" '
                    f'text-anchor="end">{escape(rows[i])}</text>')
        for j, v in enumerate(row):
            if v is None:
                continue
            t = 0.0 if hi == lo else (v - lo) / (hi - lo)
            fill = f"rgb(255,{int(255 * (1 - t))},{int(255 * (1 - t))})"
            x, y = PAD + j * cw, PAD + i * ch
            body.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{cw:.1f}" height="{ch:.1f}" '
                        f'fill="{fill}" stroke="grey"/>')
            body.append(f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" '
                        f'text-anchor="middle">{v:.2f}</text>')
    for j, c in enumerate(cols):
        body.append(f'<text x="{PAD + (j + 0.5) * cw:.1f}" y="{H - PAD + 16}" '
                    f'text-anchor="middle">{escape(c)}</text>')
    return _svg(body, title)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def build_report(run_dir, max_nodes: int = 4) -> dict[str, str]:
    """File name -> content for every table and plot a run supports."""
    run = Path(run_dir)
    metrics_path = run / "metrics.csv"
    if not run.is_dir() or not metrics_path.is_file():
        raise ConfigError(f"{run} is not a finished run directory (no metrics.csv)")
    rows = _read_csv(metrics_path)
    if not rows:
        raise ConfigError(f"{metrics_path} has no metric rows")
    out: dict[str, str] = {}

    periods = list(dict.fromkeys(r["period"] for r in rows))
    horizons = list(dict.fromkeys(r["horizon"] for r in rows))
    table, series = [], {}
    for metric in ("MAE", "RMSE", "MAPE"):
        for hz in horizons:
            by = {r["period"]: r for r in rows if r["metric"] == metric and r["horizon"] == hz}
            ys = [float(by[p]["value"]) if p in by and by[p]["value"] else None for p in periods]
            series[f"{metric} {hz}"] = ys
            table += [[p, hz, metric, "" if y is None else repr(y)] for p, y in zip(periods, ys)]
    out["metrics_by_period.csv"] = _csv_text(["period", "horizon", "metric", "value"], table)
    for metric in ("MAE", "RMSE", "MAPE"):
        sub = {k.split(" ", 1)[1]: v for k, v in series.items() if k.startswith(metric + " ")}
        if any(v is not None for ys in sub.values() for v in ys):
            out[f"{metric.lower()}_vs_period.svg"] = line_chart(sub, periods, f"{metric} per period",
                                                                 metric)

    rep_path = run / "sampler_reports.json"
    if rep_path.is_file():
        reports = json.loads(rep_path.read_text())
        hist_rows, last = [], {}
        for rep in reports:
            for node, h in sorted(rep["histograms"].items()):
                for which in ("previous", "current"):
                    hist_rows += [[rep["period"], rep["epoch"], node, which, b, repr(v)]
                                  for b, v in enumerate(h[which])]
            if rep["histograms"]:
                last = rep
        if hist_rows:
            out["histograms.csv"] = _csv_text(
                ["period", "epoch", "node", "which", "bin", "probability"], hist_rows)
            top = sorted(last["histograms"], key=lambda s: (-last["scores"][s], s))[:max_nodes]
            out["histograms.svg"] = histogram_chart(
                {s: last["histograms"][s] for s in top},
                f"Feature distributions, {last['period']} epoch {last['epoch']}")

    forg = run / "forgetting.csv"
    if forg.is_file():
        with open(forg, newline="") as fh:
            data = list(csv.reader(fh))
        cols = data[0][1:]
        names = [r[0] for r in data[1:]]
        matrix = [[float(v) if v else None for v in r[1:]] for r in data[1:]]
        out["forgetting.svg"] = heatmap(matrix, names, cols, "Test MAE after training period (rows)")
    return out


def write_report(run_dir, out_dir=None) -> list[Path]:
    files = build_report(run_dir)
    out = Path(out_dir) if out_dir is not None else Path(run_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        (out / name).write_text(text)
        written.append(out / name)
    return written
