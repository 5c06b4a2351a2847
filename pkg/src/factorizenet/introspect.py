"""Layerwise dynamic ranges and average channel precision.

For every conv/dense layer the report holds three series: raw weights,
BN-folded weights and percentile-clipped activations.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import RejectedInputError
from .nn.layers import LayerKind
from .quant import collect_activations, folded_params, range_percentile

WEIGHTS = "weights"
BN_FOLD = "bn_fold_weights"
ACTIVATIONS = "activations"
KINDS = (WEIGHTS, BN_FOLD, ACTIVATIONS)


@dataclass
class LayerStats:
    layer_name: str
    kind: str
    tensor_range: tuple
    channel_ranges: list
    avg_precision: float
    channel_axis: int
    degenerate: bool = False
    has_bn: bool = True
    flags: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.tensor_range
        for c_lo, c_hi in self.channel_ranges:
            if c_lo < lo or c_hi > hi or c_lo > c_hi:
                raise RejectedInputError(f"{self.layer_name}/{self.kind}: channel range ({c_lo}, {c_hi}) "
                                         f"outside tensor range ({lo}, {hi})")
        if not 0.0 <= self.avg_precision <= 1.0:
            raise RejectedInputError(f"average precision {self.avg_precision} outside [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["tensor_range"] = list(self.tensor_range)
        d["channel_ranges"] = [list(r) for r in self.channel_ranges]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["tensor_range"] = tuple(d["tensor_range"])
        d["channel_ranges"] = [tuple(r) for r in d["channel_ranges"]]
        return cls(**d)


def _channel_major(t, channel_axis):
    t = np.asarray(t)
    if t.ndim == 0 or not -t.ndim <= channel_axis < t.ndim:
        raise RejectedInputError(f"channel axis {channel_axis} invalid for shape {t.shape}")
    flat = np.moveaxis(t, channel_axis, 0).reshape(t.shape[channel_axis], -1)
    if flat.shape[0] == 0 or flat.shape[1] == 0:
        raise RejectedInputError(f"empty channel slice for shape {t.shape}")
    return flat


def channel_ranges(t, channel_axis=0):
    """Exact (min, max) of every channel slice."""
    flat = _channel_major(t, channel_axis)
    return [(float(lo), float(hi)) for lo, hi in zip(flat.min(axis=1), flat.max(axis=1))]


def precision_from_ranges(ranges, tensor_range):
    """Mean of channel width / tensor width. Returns ``(precision, degenerate)``."""
    width = tensor_range[1] - tensor_range[0]
    if width <= 0:
        return 1.0, True
    ratios = [(hi - lo) / width for lo, hi in ranges]
    return float(min(1.0, max(0.0, np.mean(ratios)))), False


def average_precision(t, channel_axis=0):
    ranges = channel_ranges(t, channel_axis)
    tensor_range = (min(r[0] for r in ranges), max(r[1] for r in ranges))
    return precision_from_ranges(ranges, tensor_range)[0]


def weight_stats(layer_name, kind, w, has_bn=True, flags=()):
    ranges = channel_ranges(w, 0)
    tensor_range = (min(r[0] for r in ranges), max(r[1] for r in ranges))
    prec, degenerate = precision_from_ranges(ranges, tensor_range)
    return LayerStats(layer_name, kind, tensor_range, ranges, prec, 0, degenerate, has_bn, list(flags))


def activation_stats(layer_name, a, clip_pct=(1.0, 99.0)):
    """Clipped activation stats: per-tensor percentiles for the tensor range, per-channel for channels.

    Channel ranges are intersected with the tensor range, which is what a
    per-tensor encoding can represent.
    """
    lo, hi = range_percentile(a, *clip_pct)
    flat = _channel_major(a, 1)
    pct = np.percentile(flat.astype(np.float64), list(clip_pct), axis=1)
    ranges = []
    for c_lo, c_hi in zip(pct[0], pct[1]):
        c_lo = float(min(max(c_lo, lo), hi))
        c_hi = float(min(max(c_hi, lo), hi))
        ranges.append((c_lo, c_hi))
    prec, degenerate = precision_from_ranges(ranges, (lo, hi))
    return LayerStats(layer_name, ACTIVATIONS, (lo, hi), ranges, prec, 1, degenerate)


def collect_layer_report(network, calib_inputs, clip_pct=(1.0, 99.0), batch_size=256, calibration=None):
    """Three LayerStats per conv/dense layer in depth order: weights, BN-fold weights, activations.

    When ``calibration`` is given its clip percentiles are used.
    """
    if calibration is not None:
        clip_pct = calibration.clip_pct
    folded = folded_params(network)
    acts = collect_activations(network, calib_inputs, batch_size)
    report = []
    for layer in network.layers:
        if layer.kind not in (LayerKind.CONV2D, LayerKind.DENSE):
            continue
        w_fold, _, bn = folded[layer.name]
        w = layer.params["weight"]
        has_bn = bn is not None
        report.append(weight_stats(layer.name, WEIGHTS, w, has_bn))
        if has_bn:
            report.append(weight_stats(layer.name, BN_FOLD, w_fold, True))
        else:
            report.append(weight_stats(layer.name, BN_FOLD, w, False, ["no-BN"]))
        report.append(activation_stats(layer.name, acts[layer.name], clip_pct))
    return report


CSV_FIELDS = ["layer_name", "kind", "min", "max", "avg_precision", "num_channels", "degenerate", "has_bn"]


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for s in report:
            writer.writerow([s.layer_name, s.kind, repr(s.tensor_range[0]), repr(s.tensor_range[1]),
                             repr(s.avg_precision), len(s.channel_ranges), int(s.degenerate), int(s.has_bn)])


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_report_json(report, path):
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in report], fh, indent=1)


def read_report_json(path):
    with open(path) as fh:
        return [LayerStats.from_dict(d) for d in json.load(fh)]
