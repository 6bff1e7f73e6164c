import numpy as np
import pytest

from comemnet.backbone import (NODE_INIT_STD, BackboneConfig, BackboneParams, ForecastBatch,
                               encode_features, forward)
from comemnet.numeric import Tape, finite_diff_check

SMALL = BackboneConfig(t_h=4, t_f=3, layers=2, hidden=8, node_dim=4, tod_dim=3, dow_dim=2)


def batch(rng, nodes, b=2, cfg=SMALL):
    return ForecastBatch(rng.normal(size=(b, len(nodes), cfg.t_h)), list(nodes),
                         rng.integers(0, 288, b), rng.integers(0, 7, b))


def test_ensure_nodes_growth_and_idempotence():
    p = BackboneParams(SMALL, seed=0)
    assert p.ensure_nodes([f"n{i}" for i in range(40)]) == [f"n{i}" for i in range(40)]
    before = p["node_embed"].value.copy()
    assert p.ensure_nodes([f"n{i}" for i in range(40)]) == []
    assert p.ensure_nodes([]) == []
    assert np.array_equal(p["node_embed"].value, before)
    added = p.ensure_nodes([f"n{i}" for i in range(50)])
    assert len(added) == 10 and p["node_embed"].shape == (50, SMALL.node_dim)
    assert np.array_equal(p["node_embed"].value[:40], before)


def test_new_rows_are_small_gaussian():
    p = BackboneParams(BackboneConfig(node_dim=32), seed=1)
    p.ensure_nodes([str(i) for i in range(400)])
    v = p["node_embed"].value
    assert abs(v.mean()) < 0.003 and abs(v.std() - NODE_INIT_STD) < 0.002


def test_unknown_node_raises():
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a"])
    with pytest.raises(KeyError, match="ensure_nodes"):
        forward(Tape(), p, batch(np.random.default_rng(0), ["a", "zz"]))


def test_output_shape_and_empty_batch():
    rng = np.random.default_rng(0)
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a", "b", "c"])
    assert forward(Tape(), p, batch(rng, ["a", "b", "c"], b=5)).shape == (15, SMALL.t_f)
    empty = ForecastBatch(np.zeros((0, 3, SMALL.t_h)), ["a", "b", "c"], np.zeros(0, int), np.zeros(0, int))
    assert forward(Tape(), p, empty).shape == (0, SMALL.t_f)


def test_identical_nodes_predict_identically():
    rng = np.random.default_rng(2)
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a", "b"])
    p["node_embed"].value[1] = p["node_embed"].value[0]
    bt = batch(rng, ["a", "b"], b=3)
    bt.x[:, 1] = bt.x[:, 0]
    out = forward(Tape(), p, bt).value.reshape(3, 2, -1)
    assert np.array_equal(out[:, 0], out[:, 1])


def test_forward_is_deterministic_and_prior_matters():
    rng = np.random.default_rng(3)
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a", "b"])
    bt = batch(rng, ["a", "b"])
    prior = rng.normal(size=(1, SMALL.prior_dim))
    a = forward(Tape(), p, bt, prior).value
    assert np.array_equal(a, forward(Tape(), p, bt, prior).value)
    assert not np.allclose(a, forward(Tape(), p, bt, None).value)


def test_full_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = BackboneParams(SMALL, seed=4)
    p.ensure_nodes(["a", "b", "c", "d"])
    bt = batch(rng, ["a", "b", "c", "d"], b=3)
    y = rng.normal(size=(12, SMALL.t_f))
    prior = rng.normal(size=(1, SMALL.prior_dim))
    params = [q for k, q in p.params().items() if not k.startswith("tmrb")]
    err = finite_diff_check(lambda t: t.mae(forward(t, p, bt, prior), y), params, n_coords=60)
    assert err < 1e-3


def test_encode_features_single_window_is_hidden_activation():
    rng = np.random.default_rng(5)
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a", "b", "c"])
    bt = batch(rng, ["a", "b", "c"], b=1)
    f = encode_features(p, bt)
    assert f.shape == (3, SMALL.hidden)
    twice = ForecastBatch(np.concatenate([bt.x, bt.x]), bt.nodes, np.repeat(bt.tod, 2),
                          np.repeat(bt.dow, 2))
    assert np.allclose(encode_features(p, twice), f, rtol=0, atol=1e-14)


def test_encode_features_permutes_with_nodes():
    rng = np.random.default_rng(6)
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a", "b", "c"])
    bt = batch(rng, ["a", "b", "c"], b=4)
    perm = [2, 0, 1]
    pb = ForecastBatch(bt.x[:, perm], [bt.nodes[i] for i in perm], bt.tod, bt.dow)
    assert np.allclose(encode_features(p, pb), encode_features(p, bt)[perm], atol=1e-14)


def test_copy_is_independent():
    p = BackboneParams(SMALL, seed=0)
    p.ensure_nodes(["a"])
    q = p.copy()
    q["fuse.w"].value += 1.0
    q.ensure_nodes(["b"])
    assert "b" not in p.node_index
    assert not np.array_equal(p["fuse.w"].value, q["fuse.w"].value)
