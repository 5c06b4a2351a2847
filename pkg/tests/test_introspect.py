import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorizenet.arch import DepthwiseSeparable, Regular, build_network, desk_config
from factorizenet.errors import ConfigurationError, RejectedInputError
from factorizenet.introspect import (ACTIVATIONS, BN_FOLD, WEIGHTS, LayerStats, activation_stats,
                                     average_precision, channel_ranges, collect_layer_report, read_report_csv,
                                     read_report_json, weight_stats, write_report_csv, write_report_json)
from factorizenet.nn import make_rng


def test_two_channel_example():
    t = np.array([[0.0, 1.0], [0.0, 4.0]])
    assert average_precision(t, 0) == 0.625


def test_single_channel_and_full_range():
    rng = make_rng(0)
    assert average_precision(rng.normal(size=(1, 5, 5)), 0) == 1.0
    t = np.tile(np.array([-3.0, 0.5, 2.0]), (4, 1))
    assert average_precision(t, 0) == 1.0


def test_channel_ranges_examples():
    t = np.stack([np.full((3, 3), 5.0), np.arange(9.0).reshape(3, 3)])
    r = channel_ranges(t, 0)
    assert r[0] == (5.0, 5.0) and r[1] == (0.0, 8.0)
    s = weight_stats("x", WEIGHTS, t)
    assert s.tensor_range == (0.0, 8.0)


def test_channel_ranges_scan_oracle():
    w = make_rng(1).normal(size=(8, 4, 3, 3))
    for c, (lo, hi) in enumerate(channel_ranges(w, 0)):
        vals = list(w[c].ravel())
        assert lo == min(vals) and hi == max(vals)
    # channel axis 1 on an activation
    a = make_rng(2).normal(size=(2, 5, 3, 3))
    for c, (lo, hi) in enumerate(channel_ranges(a, 1)):
        assert lo == a[:, c].min() and hi == a[:, c].max()


def test_degenerate_flagged():
    s = weight_stats("x", WEIGHTS, np.ones((3, 2)))
    assert s.avg_precision == 1.0 and s.degenerate


def test_bad_axis_or_empty():
    with pytest.raises(RejectedInputError):
        channel_ranges(np.ones((2, 2)), 3)
    with pytest.raises(RejectedInputError):
        channel_ranges(np.ones((2, 0)), 0)


def test_layerstats_invariants():
    with pytest.raises(RejectedInputError):
        LayerStats("x", WEIGHTS, (0.0, 1.0), [(0.0, 2.0)], 1.0, 0)
    with pytest.raises(RejectedInputError):
        LayerStats("x", WEIGHTS, (0.0, 1.0), [(0.0, 1.0)], 1.5, 0)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-2), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_affine_invariance(a, b, seed):
    t = make_rng(seed).normal(size=(4, 6))
    p = average_precision(t, 0)
    assert 0.0 <= p <= 1.0
    assert average_precision(a * t + b, 0) == pytest.approx(p, rel=1e-9, abs=1e-12)


def test_clipped_activation_within_unclipped():
    a = make_rng(3).standard_cauchy(size=(50, 4, 3, 3))
    wide = activation_stats("x", a, (0, 100))
    mid = activation_stats("x", a, (1, 99))
    narrow = activation_stats("x", a, (5, 95))
    assert wide.tensor_range == (a.min(), a.max())
    for inner, outer in ((mid, wide), (narrow, mid)):
        assert outer.tensor_range[0] <= inner.tensor_range[0] <= inner.tensor_range[1] <= outer.tensor_range[1]


@pytest.fixture(scope="module")
def desk_net():
    net = build_network(desk_config(), Regular(), make_rng(0))
    x = make_rng(1).random((24, 3, 16, 16)).astype(np.float32)
    return net, x


def test_report_structure(desk_net):
    net, x = desk_net
    report = collect_layer_report(net, x)
    convs = [l.name for l in net if l.kind.name in ("CONV2D", "DENSE")]
    assert len(report) == 3 * len(convs)
    assert [s.layer_name for s in report[::3]] == convs
    for i in range(0, len(report), 3):
        assert [s.kind for s in report[i:i + 3]] == [WEIGHTS, BN_FOLD, ACTIVATIONS]


def test_identity_bn_fold_equals_weights(desk_net):
    net, x = desk_net
    report = collect_layer_report(net, x)
    for i in range(0, len(report), 3):
        w, f = report[i], report[i + 1]
        np.testing.assert_allclose(f.tensor_range, w.tensor_range, rtol=1e-3)
        assert f.avg_precision == pytest.approx(w.avg_precision, rel=1e-3)
    assert report[-2].flags == ["no-BN"] and not report[-2].has_bn


def test_order_independence(desk_net):
    net, x = desk_net
    a = collect_layer_report(net, x, batch_size=5)
    b = collect_layer_report(net, x[::-1].copy(), batch_size=5)
    assert [s.to_dict() for s in a] == [s.to_dict() for s in b]


def test_missing_running_stats(desk_net):
    net, x = desk_net
    net = net.copy()
    del net["stem_bn"].buffers["running_var"]
    with pytest.raises(ConfigurationError):
        collect_layer_report(net, x)


def test_dws_report_and_serialization(tmp_path):
    net = build_network(desk_config(), DepthwiseSeparable(), make_rng(0))
    report = collect_layer_report(net, make_rng(1).random((8, 3, 16, 16)).astype(np.float32))
    write_report_csv(report, tmp_path / "l.csv")
    write_report_json(report, tmp_path / "l.json")
    rows = read_report_csv(tmp_path / "l.csv")
    assert len(rows) == len(report)
    for row, s in zip(rows, report):
        assert row["layer_name"] == s.layer_name and float(row["max"]) == s.tensor_range[1]
        assert int(row["num_channels"]) == len(s.channel_ranges)
    assert [s.to_dict() for s in read_report_json(tmp_path / "l.json")] == [s.to_dict() for s in report]
