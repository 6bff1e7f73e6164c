"""Command-line front end.

    comemnet synth  --out data/ --periods 5 --nodes 40 --growth 10 --drift 0.3
    comemnet ingest --manifest raw/manifest.json --out clean/
    comemnet train  --manifest data/manifest.json --out runs/a --variant comemnet
    comemnet sweep  --manifest data/manifest.json --param rho --values 0,0.05,0.1 --out runs/rho
    comemnet report --run runs/a

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .data import SynthConfig, ingest, load_dataset, synth_generate, write_dataset
from .errors import ConfigError
from .evaluation import VariantSpec, run_variant
from .report import write_report
from .trainer import METRICS_HEADER, TrainConfig, metrics_csv, write_run

log = logging.getLogger("comemnet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SWEEPABLE = {"rho": float, "K": int}


def load_config(path, seed=None, forgetting=False) -> TrainConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: expected a JSON object of config keys")
    cfg = TrainConfig.from_dict(doc)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if forgetting:
        cfg = replace(cfg, forgetting=True)
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of training config keys")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", default="comemnet",
                   help="paradigm and ablation flags, e.g. comemnet+no_replay or static")
    p.add_argument("--forgetting", action="store_true", help="re-test earlier periods after each one")
    p.add_argument("--parallel", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="comemnet", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a drifting synthetic benchmark")
    _common(p)
    for name, typ in (("periods", int), ("nodes", int), ("growth", int), ("drift", float),
                      ("days", int), ("noise", float)):
        p.add_argument(f"--{name}", type=typ, default=getattr(SynthConfig, name))

    p = sub.add_parser("ingest", help="clean raw per-period files into a dataset directory")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--max-missing-rate", type=float, default=0.10)
    p.add_argument("--max-post-mile", type=float, default=None,
                   help="keep only sensors below this post-mile")

    p = sub.add_parser("train", help="continual training over every period")
    _common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("sweep", help="repeat training over values of rho or K")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    p.add_argument("--values", required=True, help="comma separated values")

    p = sub.add_parser("report", help="CSV tables and SVG plots for a finished run")
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--out", help="defaults to RUN/report")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def cmd_synth(args) -> Path:
    sc = SynthConfig(args.periods, args.nodes, args.growth, args.drift, args.days, args.noise,
                     0 if args.seed is None else args.seed)
    if sc.periods < 1:
        raise ConfigError("--periods must be at least 1")
    _, datasets = synth_generate(sc)
    path = write_dataset(args.out, datasets)
    print(f"wrote {len(datasets)} periods ({', '.join(str(len(d.sensor_ids)) for d in datasets)} nodes) to {path}")
    return path


def cmd_ingest(args) -> Path:
    path = ingest(args.manifest, args.out, args.max_missing_rate, args.max_post_mile)
    print(f"wrote cleaned dataset to {path}")
    return path


def train_one(manifest, cfg: TrainConfig, variant: str, out, run_id: str = "run") -> str:
    network, datasets = load_dataset(manifest)
    state = run_variant(VariantSpec.parse(variant), datasets, cfg, network=network, run_id=run_id)
    write_run(state, out)
    return metrics_csv(state)


def cmd_train(args) -> Path:
    cfg = load_config(args.config, args.seed, args.forgetting)
    VariantSpec.parse(args.variant)
    train_one(args.manifest, cfg, args.variant, args.out)
    print(f"run written to {args.out}")
    return Path(args.out)


def _sweep_job(job):
    manifest, cfg_dict, variant, out, run_id = job
    return train_one(manifest, TrainConfig.from_dict(cfg_dict), variant, out, run_id)


def parse_values(param: str, text: str) -> list:
    raw = [v.strip() for v in text.split(",") if v.strip()]
    if not raw:
        raise ConfigError("--values is empty")
    try:
        return [SWEEPABLE[param](v) for v in raw]
    except ValueError:
        raise ConfigError(f"bad value list for {param}: {text!r}") from None


def cmd_sweep(args) -> Path:
    cfg = load_config(args.config, args.seed, args.forgetting)
    VariantSpec.parse(args.variant)
    values = parse_values(args.param, args.values)
    if args.parallel < 1:
        raise ConfigError("--parallel must be at least 1")
    out = Path(args.out)
    jobs = []
    for v in values:
        c = replace(cfg, **{args.param: v})
        tag = f"{args.param}={v}"
        jobs.append((args.manifest, c.to_dict(), args.variant, str(out / tag), tag))
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as ex:
            texts = list(ex.map(_sweep_job, jobs))
    else:
        texts = [_sweep_job(j) for j in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "param_value"] + METRICS_HEADER)
    for v, text in zip(values, texts):
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            w.writerow([args.param, repr(v)] + row)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue())
    print(f"{len(values)} runs; combined metrics in {out / 'sweep.csv'}")
    return out / "sweep.csv"


def cmd_report(args) -> list[Path]:
    files = write_report(args.run, args.out)
    for f in files:
        print(f)
    return files


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "sweep": cmd_sweep,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"comemnet {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("failure", exc_info=True)
        print(f"comemnet {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
