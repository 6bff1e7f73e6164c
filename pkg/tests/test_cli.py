import csv
import json
import subprocess
import sys

import pytest

from comemnet.cli import load_config, main
from comemnet.errors import ConfigError

SMALL = {"epochs": 1, "batch_size": 64, "hidden": 8, "node_dim": 4, "tod_dim": 2, "dow_dim": 2,
         "layers": 1, "rho": 0.5, "sampler_batches": 1, "sampler_batch_size": 8, "eval_batch_size": 512}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main(["synth", "--out", str(root / "data"), "--periods", "2", "--nodes", "6",
               "--growth", "2", "--days", "2", "--seed", "5"])
    assert rc == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    return root, root / "data" / "manifest.json", cfg


def test_train_writes_run_and_is_reproducible(dataset):
    root, man, cfg = dataset
    outs = []
    for k in range(2):
        out = root / f"run{k}"
        assert main(["train", "--manifest", str(man), "--config", str(cfg), "--seed", "1",
                     "--out", str(out), "--forgetting"]) == 0
        outs.append(out)
    names = {"resolved_config.json", "metrics.csv", "summary.json", "sampler_reports.json",
             "memory.json", "forgetting.csv", "checkpoint.npz"}
    assert names <= {p.name for p in outs[0].iterdir()}
    for f in ("metrics.csv", "sampler_reports.json", "summary.json", "memory.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    resolved = json.loads((outs[0] / "resolved_config.json").read_text())["config"]
    assert resolved["seed"] == 1 and resolved["beta"] == 0.99 and resolved["lr_decay"] == 0.5
    assert resolved["forgetting"] is True


def test_defaults_are_resolved(dataset, tmp_path):
    cfg = load_config(None)
    assert cfg.batch_size == 128 and cfg.lr == 0.01 and cfg.rho == 0.05


def test_report(dataset):
    root, man, cfg = dataset
    run = root / "rep"
    assert main(["train", "--manifest", str(man), "--config", str(cfg), "--out", str(run),
                 "--forgetting"]) == 0
    assert main(["report", "--run", str(run)]) == 0
    names = {p.name for p in (run / "report").iterdir()}
    assert {"metrics_by_period.csv", "mae_vs_period.svg", "rmse_vs_period.svg",
            "histograms.csv", "histograms.svg", "forgetting.svg"} <= names
    assert (run / "report" / "mae_vs_period.svg").read_text().startswith("<svg")


def test_sweep(dataset):
    root, man, cfg = dataset
    out = root / "sweep"
    assert main(["sweep", "--manifest", str(man), "--config", str(cfg), "--out", str(out),
                 "--param", "rho", "--values", "0.0,0.5", "--parallel", "2"]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert {r["param_value"] for r in rows} == {"0.0", "0.5"}
    assert (out / "rho=0.0" / "metrics.csv").is_file()
    trained = {r["param_value"]: r["nodes_trained"] for r in rows if r["period"] == rows[-1]["period"]}
    assert int(trained["0.0"]) < int(trained["0.5"])


def test_errors_exit_with_usage_code(dataset, tmp_path, capsys):
    root, man, cfg = dataset
    assert main(["train", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["report", "--run", str(tmp_path)]) == 2
    assert not list(tmp_path.iterdir())
    bad = tmp_path / "bad.json"
    bad.write_text('{"learning_rate": 1}')
    assert main(["train", "--manifest", str(man), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err
    assert main(["sweep", "--manifest", str(man), "--out", str(tmp_path / "s"), "--param", "rho",
                 "--values", ","]) == 2
    assert main(["train", "--manifest", str(man), "--out", str(tmp_path / "o"),
                 "--variant", "bogus"]) == 2
    assert main(["nope"]) == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "comemnet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("synth", "ingest", "train", "sweep", "report"):
        assert cmd in r.stdout
