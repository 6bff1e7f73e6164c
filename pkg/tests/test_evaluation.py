import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comemnet.errors import ConfigError
from comemnet.evaluation import (MetricRow, VariantSpec, backward_transfer, compute_metrics,
                                 forgetting_report, is_consistent, per_node_mae, run_variant)
from conftest import tiny_config


def _rows(rows):
    return {(r.horizon, r.metric): r.value for r in rows}


def test_metrics_match_direct_formulas():
    rng = np.random.default_rng(0)
    truth = rng.uniform(5, 50, size=(6, 4, 12))
    pred = truth + rng.normal(size=truth.shape) * 3
    got = _rows(compute_metrics(pred, truth))
    assert set(got) == {(h, m) for h in ("step-3", "step-6", "step-12", "avg-12")
                        for m in ("MAE", "RMSE", "MAPE")}
    for h, col in (("step-3", 2), ("step-6", 5), ("step-12", 11)):
        e = (pred - truth)[..., col].ravel()
        t = truth[..., col].ravel()
        assert got[(h, "MAE")] == pytest.approx(sum(abs(x) for x in e) / e.size, rel=1e-12)
        assert got[(h, "RMSE")] == pytest.approx((sum(x * x for x in e) / e.size) ** 0.5, rel=1e-12)
        assert got[(h, "MAPE")] == pytest.approx(100 * sum(abs(x) / y for x, y in zip(e, t)) / e.size,
                                                 rel=1e-12)
    assert got[("avg-12", "MAE")] == pytest.approx(np.abs(pred - truth).mean(), rel=1e-12)


def test_mape_masks_zero_targets():
    truth = np.array([0.0, 0.0, 10.0, 20.0]).reshape(1, 4, 1)
    pred = np.array([5.0, 1.0, 12.0, 10.0]).reshape(1, 4, 1)
    got = _rows(compute_metrics(pred, truth, horizons=()))
    assert got[("avg-1", "MAPE")] == pytest.approx(100 * (0.2 + 0.5) / 2, rel=1e-12)
    assert got[("avg-1", "MAE")] == pytest.approx(4.5)
    none = _rows(compute_metrics(np.ones((1, 2, 1)), np.zeros((1, 2, 1)), horizons=()))
    assert none[("avg-1", "MAPE")] is None


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_rmse_at_least_mae(seed):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(0, 3, size=(3, 5, 12)) * (rng.random((3, 5, 12)) > 0.3)
    pred = truth + rng.standard_cauchy(truth.shape)
    rows = compute_metrics(pred, truth)
    assert is_consistent(rows)
    assert all(r.value is None or np.isfinite(r.value) for r in rows)


def test_metric_errors_and_consistency_check():
    with pytest.raises(ConfigError):
        compute_metrics(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))
    bad = [MetricRow("p", "avg-12", "MAE", 2.0, 1, 1), MetricRow("p", "avg-12", "RMSE", 1.0, 1, 1)]
    assert not is_consistent(bad)


def test_per_node_mae():
    pred = np.zeros((2, 2, 3))
    truth = np.stack([np.ones((2, 3)), 2 * np.ones((2, 3))], axis=1)
    assert per_node_mae(pred, truth).tolist() == [1.0, 2.0]


def test_variant_parsing():
    assert VariantSpec.parse("static") == VariantSpec("static")
    assert VariantSpec.parse("no_replay") == VariantSpec(no_replay=True)
    v = VariantSpec.parse("comemnet+no-tmrb")
    assert v.no_tmrb and v.name == "comemnet+no_tmrb" and v.prior_mode == "off"
    assert VariantSpec(no_update=True).prior_mode == "no_update"
    assert VariantSpec(random_select=True).prior_mode == "random_select"
    for text in ("", "bogus", "static+no_replay", "no_increase+no_replay", "no_tmrb+no_update"):
        with pytest.raises(ConfigError):
            VariantSpec.parse(text)


def test_backward_transfer():
    assert backward_transfer([[1.0]]) == 0.0
    m = [[1.0], [2.0, 5.0], [4.0, 6.0, 3.0]]
    assert backward_transfer(m) == pytest.approx(((4 - 1) + (6 - 5)) / 2)


def test_forgetting_matrix_diagonal_is_test_mae(toy):
    net, ds = toy
    state = run_variant(VariantSpec(), ds, tiny_config(forgetting=True), net)
    m = forgetting_report(state)
    assert [len(r) for r in m] == [1, 2, 3]
    for i, s in enumerate(state.summaries):
        assert m[i][i] == pytest.approx(s["test"]["avg-12/MAE"], rel=1e-12)
    with pytest.raises(ConfigError):
        forgetting_report(run_variant(VariantSpec(), ds[:1], tiny_config(), net))
