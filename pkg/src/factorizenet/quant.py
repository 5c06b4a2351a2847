"""Post-training affine quantization, simulated in floating point.

Weights are quantized per tensor from their exact min/max after BatchNorm
folding; activations are quantized per tensor from percentile-clipped ranges
observed on a calibration set.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RejectedInputError
from .nn import functional as F
from .nn.layers import LayerKind

INPUT_SITE = "input"


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bits: int = 8

    @property
    def qmax(self):
        return (1 << self.bits) - 1

    @property
    def real_min(self):
        return -self.zero_point * self.scale

    @property
    def real_max(self):
        return (self.qmax - self.zero_point) * self.scale


@dataclass
class QuantizedTensor:
    payload: np.ndarray
    qp: QuantParams

    @property
    def shape(self):
        return self.payload.shape


def choose_qparams(lo, hi, bits=8):
    """Affine parameters for [lo, hi], widened to include 0 and nudged so 0 is exactly representable."""
    lo, hi = float(lo), float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise RejectedInputError(f"non-finite range ({lo}, {hi})")
    if lo > hi:
        raise RejectedInputError(f"range min {lo} > max {hi}")
    qmax = (1 << bits) - 1
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi == lo:
        return QuantParams(1.0, 0, bits)
    scale = (hi - lo) / qmax
    zero_point = int(np.clip(np.round(-lo / scale), 0, qmax))
    return QuantParams(scale, zero_point, bits)


def quantize(t, qp):
    t = np.asarray(t)
    q = np.clip(np.round(t.astype(np.float64) / qp.scale) + qp.zero_point, 0, qp.qmax)
    return QuantizedTensor(q.astype(np.uint8 if qp.bits <= 8 else np.uint16), qp)


def quantize_affine(t, value_range, bits=8):
    return quantize(t, choose_qparams(value_range[0], value_range[1], bits))


def dequantize(q, dtype=np.float32):
    return (q.qp.scale * (q.payload.astype(np.float64) - q.qp.zero_point)).astype(dtype)


def fake_quantize(t, value_range, bits=8):
    """quantize -> dequantize in one step, keeping the input dtype."""
    t = np.asarray(t)
    return dequantize(quantize_affine(t, value_range, bits), t.dtype)


def range_minmax(t):
    t = np.asarray(t)
    if t.size == 0:
        raise RejectedInputError("range of an empty tensor")
    return float(t.min()), float(t.max())


def range_percentile(samples, lo_pct=1.0, hi_pct=99.0):
    """Percentiles of the pooled values, linearly interpolated between order statistics."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise RejectedInputError("percentile range of an empty tensor")
    if not 0 <= lo_pct < hi_pct <= 100:
        raise RejectedInputError(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    lo, hi = np.percentile(samples.ravel().astype(np.float64), [lo_pct, hi_pct])
    return float(lo), float(hi)


def fold_batchnorm(w, b, gamma, beta, mean, var, eps):
    """Absorb an inference-mode BatchNorm into the preceding conv/dense parameters."""
    w = np.asarray(w)
    c = w.shape[0]
    for name, arr in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if np.shape(arr) != (c,):
            raise RejectedInputError(f"{name} has shape {np.shape(arr)}, expected ({c},)")
    if np.any(np.asarray(var) < 0):
        raise RejectedInputError("negative BatchNorm variance")
    if b is None:
        b = np.zeros(c, w.dtype)
    mult = (np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps))
    w_fold = w.astype(np.float64) * mult.reshape((c,) + (1,) * (w.ndim - 1))
    b_fold = np.asarray(beta, np.float64) + (np.asarray(b, np.float64) - np.asarray(mean, np.float64)) * mult
    return w_fold.astype(w.dtype), b_fold.astype(w.dtype)


def _next_bn(network, i):
    layers = network.layers
    if i + 1 < len(layers) and layers[i + 1].kind is LayerKind.BATCHNORM:
        return layers[i + 1]
    return None


def folded_params(network):
    """``{layer_name: (w_fold, b_fold, bn_layer_or_None)}`` for every conv/dense layer."""
    out = {}
    for i, layer in enumerate(network.layers):
        if layer.kind not in (LayerKind.CONV2D, LayerKind.DENSE):
            continue
        bn = _next_bn(network, i)
        w, b = layer.params["weight"], layer.params["bias"]
        if bn is not None:
            if "running_mean" not in bn.buffers or "running_var" not in bn.buffers:
                raise ConfigurationError(f"{bn.name} has no running statistics")
            w, b = fold_batchnorm(w, b, bn.params["gamma"], bn.params["beta"], bn.buffers["running_mean"],
                                  bn.buffers["running_var"], bn.eps)
        out[layer.name] = (w, b, bn)
    return out


def activation_sites(network):
    """Map each conv/dense layer to the layer whose output is its quantized activation.

    That is the ReLU closing the Conv/BN/ReLU triple, or the layer itself when
    no ReLU follows (the logits).
    """
    sites = {}
    layers = network.body
    for i, layer in enumerate(layers):
        if layer.kind not in (LayerKind.CONV2D, LayerKind.DENSE):
            continue
        j = i + 1
        if j < len(layers) and layers[j].kind is LayerKind.BATCHNORM:
            j += 1
        if j < len(layers) and layers[j].kind is LayerKind.RELU:
            sites[layer.name] = layers[j].name
        else:
            sites[layer.name] = layer.name
    return sites


def collect_activations(network, inputs, batch_size=256):
    """Infer-mode activations at every quantization site, keyed by conv/dense layer name (plus ``input``).

    Samples are run in a canonical (byte-sorted) order so that permuting the
    inputs gives bit-identical batches and therefore identical statistics.
    """
    sites = activation_sites(network)
    by_output = {v: k for k, v in sites.items()}
    inputs = np.asarray(inputs, network.dtype)
    flat = inputs.reshape(len(inputs), -1)
    inputs = inputs[np.lexsort(flat.T[::-1])] if len(inputs) > 1 else inputs
    buffers = {INPUT_SITE: [inputs]}
    buffers.update({k: [] for k in sites})

    def observe(layer, out):
        if layer.name in by_output:
            buffers[by_output[layer.name]].append(out)

    for i in range(0, len(inputs), batch_size):
        network.forward(inputs[i:i + batch_size], observer=observe)
    return {k: np.concatenate(v, axis=0) for k, v in buffers.items()}


@dataclass
class CalibrationRecord:
    activations: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    bn_fold_weights: dict = field(default_factory=dict)
    clip_pct: tuple = (1.0, 99.0)
    num_samples: int = 0

    def __post_init__(self):
        for group in (self.activations, self.weights, self.bn_fold_weights):
            for name, (lo, hi) in group.items():
                if lo > hi:
                    raise RejectedInputError(f"calibration entry {name} has min {lo} > max {hi}")

    def to_dict(self):
        def pairs(d):
            return {k: [float(v[0]), float(v[1])] for k, v in d.items()}

        return {
            "clip_pct": list(self.clip_pct),
            "num_samples": self.num_samples,
            "activations": pairs(self.activations),
            "weights": pairs(self.weights),
            "bn_fold_weights": pairs(self.bn_fold_weights),
        }

    @classmethod
    def from_dict(cls, d):
        def pairs(x):
            return {k: (float(v[0]), float(v[1])) for k, v in x.items()}

        return cls(pairs(d["activations"]), pairs(d["weights"]), pairs(d["bn_fold_weights"]),
                   tuple(d["clip_pct"]), int(d["num_samples"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def calibrate(network, calib_inputs, clip_pct=(1.0, 99.0), batch_size=256):
    """Record quantization ranges for every site from fp32 inference over ``calib_inputs``.

    Activation ranges are percentiles of the pooled values at each site, so the
    result does not depend on sample order.
    """
    if len(calib_inputs) < 1:
        raise RejectedInputError("calibration needs at least one sample")
    acts = collect_activations(network, calib_inputs, batch_size)
    record = CalibrationRecord(clip_pct=tuple(float(p) for p in clip_pct), num_samples=len(calib_inputs))
    for name, values in acts.items():
        record.activations[name] = range_percentile(values, *clip_pct)
    for name, (w_fold, _, _) in folded_params(network).items():
        record.weights[name] = range_minmax(network[name].params["weight"])
        record.bn_fold_weights[name] = range_minmax(w_fold)
    return record


def quantized_inference(network, record, x, bits=8, quantize_dense=True, batch_size=256, return_logits=False):
    """Simulated quantized execution; returns softmax probabilities over dequantized logits.

    Each conv/dense runs with BN-folded, per-tensor fake-quantized weights (bias
    stays in float), and its output activation is fake-quantized with the
    calibrated range. Max pooling commutes with the quantizer and is applied as is.
    """
    sites = activation_sites(network)
    folded = folded_params(network)
    missing = [n for n in list(folded) + [INPUT_SITE] if n not in record.activations]
    missing += [n for n in folded if n not in record.bn_fold_weights]
    if missing:
        raise ConfigurationError(f"calibration record has no entry for {sorted(set(missing))}")

    qweights = {}
    for name, (w, b, _) in folded.items():
        if network[name].kind is LayerKind.DENSE and not quantize_dense:
            qweights[name] = (w, b)
        else:
            qweights[name] = (fake_quantize(w, record.bn_fold_weights[name], bits), b)
    site_after = {v: k for k, v in sites.items()}
    skip_bn = {bn.name for (_, _, bn) in folded.values() if bn is not None}

    def run(xb):
        h = fake_quantize(np.asarray(xb, network.dtype), record.activations[INPUT_SITE], bits)
        for layer in network.body:
            if layer.name in skip_bn:
                pass
            elif layer.kind is LayerKind.CONV2D:
                w, b = qweights[layer.name]
                h = F.conv2d_forward(h, w, b, layer.groups, layer.stride, layer.padding)
            elif layer.kind is LayerKind.DENSE:
                w, b = qweights[layer.name]
                h = F.dense_forward(h, w, b)
            else:
                h = layer.forward(h)
            if layer.name in site_after:
                owner = site_after[layer.name]
                if network[owner].kind is LayerKind.CONV2D or quantize_dense:
                    h = fake_quantize(h, record.activations[owner], bits)
        return h

    logits = np.concatenate([run(x[i:i + batch_size]) for i in range(0, len(x), batch_size)], axis=0)
    if return_logits:
        return logits
    return F.softmax(logits)


def folded_inference(network, x, batch_size=256):
    """Float logits of the BN-folded network (no quantization)."""
    folded = folded_params(network)
    skip_bn = {bn.name for (_, _, bn) in folded.values() if bn is not None}

    def run(xb):
        h = np.asarray(xb, network.dtype)
        for layer in network.body:
            if layer.name in skip_bn:
                continue
            if layer.kind is LayerKind.CONV2D:
                w, b, _ = folded[layer.name]
                h = F.conv2d_forward(h, w, b, layer.groups, layer.stride, layer.padding)
            elif layer.kind is LayerKind.DENSE:
                w, b, _ = folded[layer.name]
                h = F.dense_forward(h, w, b)
            else:
                h = layer.forward(h)
        return h

    return np.concatenate([run(x[i:i + batch_size]) for i in range(0, len(x), batch_size)], axis=0)


def _check_pair(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise RejectedInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _check_probs(p):
    if p.ndim != 2 or np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-5):
        raise RejectedInputError("expected rows of probabilities summing to 1")


def qmse(fp32_out, q_out):
    a, b = _check_pair(fp32_out, q_out)
    return float(np.mean((a - b) ** 2))


def qce(fp32_probs, q_probs, floor=1e-12):
    """Mean cross entropy with the fp32 distribution as reference."""
    p, q = _check_pair(fp32_probs, q_probs)
    _check_probs(p)
    _check_probs(q)
    return float(np.mean(-(p * np.log(q + floor)).sum(axis=1)))


def relative_degradation(acc_fp32, acc_q):
    if acc_fp32 <= 0:
        raise RejectedInputError("fp32 accuracy must be positive")
    return (acc_fp32 - acc_q) / acc_fp32
