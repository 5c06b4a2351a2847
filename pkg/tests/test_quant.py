import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorizenet.arch import Uniform, build_network, desk_config
from factorizenet.errors import ConfigurationError, RejectedInputError
from factorizenet.nn import BatchNorm, Conv2D, Dense, Network, ReLU, SoftmaxOutput, make_rng
from factorizenet.quant import (INPUT_SITE, CalibrationRecord, calibrate, choose_qparams, dequantize,
                                fake_quantize, fold_batchnorm, folded_inference, qce, qmse, quantize_affine,
                                quantized_inference, range_minmax, range_percentile, relative_degradation)


def _conv_bn_net(rng, bn=True, relu=True, bias=True, c=4):
    layers = [Conv2D("c1", 3, c, 3, padding=1)]
    if bn:
        layers.append(BatchNorm("c1_bn", c))
    if relu:
        layers.append(ReLU("c1_relu"))
    layers += [Dense("fc", c * 4 * 4, 3), SoftmaxOutput("softmax")]
    net = Network(layers)
    for layer in net:
        if hasattr(layer, "init_params"):
            layer.init_params(rng)
    if not bias:
        for layer in net:
            if "bias" in layer.params:
                layer.params["bias"][:] = 0
    if bn:
        b = net["c1_bn"]
        b.params["gamma"][:] = rng.uniform(0.5, 2.0, c)
        b.params["beta"][:] = rng.normal(0, 0.3, c)
        b.buffers["running_mean"][:] = rng.normal(0, 0.3, c)
        b.buffers["running_var"][:] = rng.uniform(0.2, 3.0, c)
    return net


# -- BN folding ------------------------------------------------------------

def test_fold_identity_bn():
    rng = make_rng(0)
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    wf, bf = fold_batchnorm(w, b, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), 1e-12)
    np.testing.assert_allclose(wf, w, rtol=1e-9)
    np.testing.assert_allclose(bf, b, rtol=1e-9)


def test_fold_multiplier():
    w = np.ones((2, 1, 1, 1))
    wf, bf = fold_batchnorm(w, np.zeros(2), np.full(2, 2.0), np.zeros(2), np.zeros(2), np.full(2, 3.0), 1e-3)
    np.testing.assert_allclose(wf.ravel(), 2 / np.sqrt(3.001), rtol=1e-12)
    np.testing.assert_allclose(bf, 0.0)


def test_fold_bias_formula():
    wf, bf = fold_batchnorm(np.ones((1, 2)), np.array([1.5]), np.array([2.0]), np.array([0.25]),
                            np.array([0.5]), np.array([4.0]), 0.0)
    assert bf[0] == pytest.approx(0.25 + (1.5 - 0.5) * 2 / 2)


def test_fold_equivalence_random_conv():
    rng = make_rng(3)
    net = _conv_bn_net(rng)
    x = rng.normal(size=(5, 3, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(folded_inference(net, x), net.forward(x), atol=1e-4)


def test_fold_errors():
    with pytest.raises(RejectedInputError):
        fold_batchnorm(np.ones((2, 1)), None, np.ones(2), np.zeros(2), np.zeros(2), np.array([1.0, -1.0]), 1e-3)
    with pytest.raises(RejectedInputError):
        fold_batchnorm(np.ones((2, 1)), None, np.ones(3), np.zeros(2), np.zeros(2), np.ones(2), 1e-3)


# -- ranges ----------------------------------------------------------------

def test_percentile_exact_order_statistics():
    assert range_percentile(np.arange(101.0), 1, 99) == (1.0, 99.0)


def test_percentile_constant_and_minmax():
    assert range_percentile(np.full((3, 4), 2.5)) == (2.5, 2.5)
    assert range_minmax(np.array([[3.0, -1.0], [7.0, 0.0]])) == (-1.0, 7.0)


def test_percentile_normal_quantiles():
    lo, hi = range_percentile(make_rng(11).standard_normal(10_000))
    assert abs(lo + 2.326) < 0.1 and abs(hi - 2.326) < 0.1


def test_percentile_matches_sort_oracle():
    x = make_rng(2).exponential(size=997)
    s = np.sort(x)
    pos = 0.99 * (len(s) - 1)
    i = int(np.floor(pos))
    oracle = s[i] + (pos - i) * (s[i + 1] - s[i])
    assert range_percentile(x)[1] == pytest.approx(oracle, rel=1e-12)


def test_range_errors():
    with pytest.raises(RejectedInputError):
        range_minmax(np.array([]))
    with pytest.raises(RejectedInputError):
        range_percentile(np.array([]))
    with pytest.raises(RejectedInputError):
        range_percentile(np.ones(3), 50, 50)


# -- affine quantization ---------------------------------------------------

def test_zeros_exact():
    q = quantize_affine(np.zeros(10), (-1.0, 1.0))
    assert np.all(q.payload == q.qp.zero_point)
    assert np.all(dequantize(q) == 0.0)


def test_integer_grid_exact():
    x = np.arange(256.0)
    q = quantize_affine(x, (0.0, 255.0))
    assert q.qp.scale == 1.0 and q.qp.zero_point == 0
    np.testing.assert_array_equal(q.payload, x)
    np.testing.assert_array_equal(dequantize(q, np.float64), x)


def test_range_nudged_to_include_zero():
    qp = choose_qparams(2.0, 5.0)
    assert qp.zero_point == 0 and qp.scale == pytest.approx(5 / 255)
    qp = choose_qparams(-4.0, -1.0)
    assert qp.zero_point == 255


def test_min_greater_than_max_rejected():
    with pytest.raises(RejectedInputError):
        quantize_affine(np.ones(2), (1.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(lo=st.floats(-50, 0), width=st.floats(1e-3, 100), seed=st.integers(0, 2**31))
def test_roundtrip_error_bound(lo, width, seed):
    hi = lo + width
    qp = choose_qparams(lo, hi)
    x = make_rng(seed).uniform(min(lo, 0), max(hi, 0), 64)
    err = np.abs(dequantize(quantize_affine(x, (lo, hi)), np.float64) - x)
    assert np.all(err <= qp.scale / 2 * (1 + 1e-9) + 1e-12)


def test_grid_points_roundtrip_exact():
    qp = choose_qparams(-0.7, 1.9)
    grid = qp.scale * (np.arange(256) - qp.zero_point)
    np.testing.assert_allclose(dequantize(quantize_affine(grid, (-0.7, 1.9)), np.float64), grid, rtol=0, atol=1e-12)


def test_saturation_only_outside():
    qp = choose_qparams(-1.0, 1.0)
    y = fake_quantize(np.array([-10.0, 10.0]), (-1.0, 1.0))
    np.testing.assert_allclose(y, [qp.real_min, qp.real_max])


# -- calibration -----------------------------------------------------------

def test_calibrate_single_constant_sample_degenerate():
    net = Network([Dense("fc", 3, 1), SoftmaxOutput("softmax")])
    net["fc"].params["weight"][:] = [[1, 2, 0]]
    rec = calibrate(net, np.ones((1, 3), np.float32))
    assert rec.activations["fc"] == (3.0, 3.0)
    lo, hi = rec.activations[INPUT_SITE]
    assert lo == hi == 1.0


def test_calibrate_positive_homogeneity():
    rng = make_rng(4)
    net = _conv_bn_net(rng, bn=False, bias=False)
    x = rng.normal(size=(20, 3, 4, 4)).astype(np.float32)
    r1, r2 = calibrate(net, x), calibrate(net, 2 * x)
    for k in r1.activations:
        np.testing.assert_allclose(r2.activations[k], 2 * np.array(r1.activations[k]), rtol=1e-5, atol=1e-7)


def test_calibrate_sort_oracle_and_order_independence():
    rng = make_rng(5)
    net = _conv_bn_net(rng)
    x = rng.normal(size=(33, 3, 4, 4)).astype(np.float32)
    rec = calibrate(net, x, batch_size=7)
    acts = net.forward(x, observer=None)
    vals = np.sort(acts.ravel().astype(np.float64))
    pos = 0.99 * (len(vals) - 1)
    i = int(pos)
    assert rec.activations["fc"][1] == pytest.approx(vals[i] + (pos - i) * (vals[i + 1] - vals[i]), rel=1e-6)
    rec2 = calibrate(net, x[make_rng(0).permutation(len(x))], batch_size=7)
    assert rec2.to_dict() == rec.to_dict()


def test_calibrate_records_all_sites_and_weight_ranges():
    net = build_network(desk_config(), Uniform(2), make_rng(0))
    rec = calibrate(net, make_rng(1).random((8, 3, 16, 16)).astype(np.float32))
    convs = [l.name for l in net if l.kind.name in ("CONV2D", "DENSE")]
    assert set(rec.activations) == set(convs) | {INPUT_SITE}
    assert set(rec.weights) == set(rec.bn_fold_weights) == set(convs)
    for name in convs:
        assert rec.weights[name] == range_minmax(net[name].params["weight"])


def test_calibration_record_json_roundtrip(tmp_path):
    rec = CalibrationRecord({"a": (-1.0, 2.0)}, {"a": (0.0, 1.0)}, {"a": (0.0, 3.0)}, (1.0, 99.0), 4)
    path = tmp_path / "calib.json"
    rec.save(path)
    assert CalibrationRecord.load(path) == rec
    assert json.loads(path.read_text())["activations"]["a"] == [-1.0, 2.0]
    with pytest.raises(RejectedInputError):
        CalibrationRecord({"a": (2.0, 1.0)})


# -- quantized inference ---------------------------------------------------

def test_more_bits_closer_to_fp32():
    rng = make_rng(6)
    net = _conv_bn_net(rng)
    x = rng.normal(size=(40, 3, 4, 4)).astype(np.float32)
    rec = calibrate(net, x, clip_pct=(0, 100))
    p = net.predict_proba(x)
    e8 = qmse(p, quantized_inference(net, rec, x, bits=8))
    e16 = qmse(p, quantized_inference(net, rec, x, bits=16))
    assert e16 < e8 / 100


def test_argmax_preserved_generous_ranges():
    rng = make_rng(7)
    net = Network([Dense("fc", 6, 4), SoftmaxOutput("softmax")])
    net["fc"].init_params(rng)
    x = rng.uniform(-1, 1, (200, 6)).astype(np.float32)
    rec = calibrate(net, x, clip_pct=(0, 100))
    logits = net.forward(x)
    top2 = np.sort(logits, axis=1)
    clear = (top2[:, -1] - top2[:, -2]) > 0.05
    pq = quantized_inference(net, rec, x)
    assert np.mean(pq.argmax(1)[clear] == logits.argmax(1)[clear]) == 1.0


def test_saturating_calibration_changes_outputs():
    rng = make_rng(8)
    net = _conv_bn_net(rng)
    x = rng.normal(size=(20, 3, 4, 4)).astype(np.float32)
    rec = calibrate(net, x)
    narrow = CalibrationRecord({k: (v[0] * 0.01, v[1] * 0.01) for k, v in rec.activations.items()},
                               rec.weights, rec.bn_fold_weights)
    p = net.predict_proba(x)
    assert qmse(p, quantized_inference(net, narrow, x)) > 10 * qmse(p, quantized_inference(net, rec, x))


def test_missing_entry_is_configuration_error():
    rng = make_rng(9)
    net = _conv_bn_net(rng)
    x = rng.normal(size=(4, 3, 4, 4)).astype(np.float32)
    rec = calibrate(net, x)
    del rec.activations["c1"]
    with pytest.raises(ConfigurationError):
        quantized_inference(net, rec, x)


def test_dense_switch_leaves_dense_float():
    rng = make_rng(10)
    net = Network([Dense("fc", 5, 3), SoftmaxOutput("softmax")])
    net["fc"].init_params(rng)
    x = rng.normal(size=(10, 5)).astype(np.float32)
    wide = CalibrationRecord({INPUT_SITE: (-1e6, 1e6), "fc": (-1.0, 1.0)}, {"fc": (-1, 1)}, {"fc": (-1.0, 1.0)})
    # input grid is coarse (scale ~7800) so inputs collapse to 0; logits = bias both ways
    out = quantized_inference(net, wide, x, quantize_dense=False, return_logits=True)
    np.testing.assert_allclose(out, np.broadcast_to(net["fc"].params["bias"], out.shape), atol=1e-6)


# -- metrics ---------------------------------------------------------------

def test_relative_degradation_examples():
    assert relative_degradation(0.8837, 0.8560) == pytest.approx(0.0313, abs=1e-4)
    assert relative_degradation(0.8654, 0.8005) == pytest.approx(0.0750, abs=1e-4)
    assert 0.0588 <= relative_degradation(0.8654, 0.8005) <= 0.0753


@given(c=st.floats(1e-3, 1e3), a=st.floats(0.01, 1), b=st.floats(0, 1))
def test_relative_degradation_scale_invariant(c, a, b):
    assert relative_degradation(c * a, c * b) == pytest.approx(relative_degradation(a, b), rel=1e-9, abs=1e-12)


def test_identical_outputs():
    p = np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]])
    assert qmse(p, p) == 0.0
    entropy = np.mean(-(p * np.log(p)).sum(axis=1))
    assert qce(p, p) == pytest.approx(entropy, abs=1e-9)


def test_qce_direction_and_floor():
    p = np.array([[1.0, 0.0]])
    q = np.array([[0.0, 1.0]])
    assert qce(p, q) == pytest.approx(-np.log(1e-12))
    assert qce(q, q) == pytest.approx(0.0, abs=1e-9)


def test_metric_errors():
    with pytest.raises(RejectedInputError):
        qmse(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(RejectedInputError):
        qce(np.array([[0.5, 0.6]]), np.array([[0.5, 0.5]]))
    with pytest.raises(RejectedInputError):
        relative_degradation(0.0, 0.1)
