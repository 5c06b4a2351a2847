"""End-to-end sweep over a factorization progression.

For each scheme: build, train, checkpoint, calibrate, evaluate fp32 and
simulated quint8, compute output-divergence metrics and the layerwise report.
Everything lands under ``out_dir/<label>/``; the summary is a pure function of
the configs, seeds and dataset bytes.
"""

import csv
import dataclasses
import json
import logging
import os
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import introspect
from .arch import build_network, build_plan, layer_macs, mac_table, network_macs
from .checkpoint import save_checkpoint
from .data import load_cifar10, load_cifar10_subset, downscale
from .nn.init import derive_seed, make_rng
from .quant import calibrate, qce, qmse, quantized_inference, relative_degradation
from .train import train, write_history_csv

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["label", "macs", "acc_fp32", "acc_q", "qmse", "qce", "rel_drop", "status", "scheme", "seed",
                  "config_hash", "error"]


@dataclass
class SweepRow:
    label: str
    scheme: str
    macs: int
    seed: int
    config_hash: str
    status: str = "ok"
    acc_fp32: float = float("nan")
    acc_q: float = float("nan")
    qmse: float = float("nan")
    qce: float = float("nan")
    rel_drop: float = float("nan")
    history_path: str = ""
    layer_stats: list = field(default_factory=list)
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)
    master_seed: int = 0
    run_config: dict = field(default_factory=dict)

    @property
    def failed(self):
        return [r for r in self.rows if not r.ok]

    def to_dict(self):
        rows = []
        for r in self.rows:
            d = dataclasses.asdict(r)
            d["layer_stats"] = [s.to_dict() for s in r.layer_stats]
            rows.append(d)
        return {"master_seed": self.master_seed, "run_config": self.run_config, "rows": rows}


def load_data(data_cfg, path):
    """Train/test Datasets for a DataConfig (class subset, sample counts, downscaling)."""
    if data_cfg.classes:
        n_train = data_cfg.train_samples or 5000 * len(data_cfg.classes)
        n_test = data_cfg.test_samples or 1000 * len(data_cfg.classes)
        return load_cifar10_subset(path, data_cfg.classes, n_train, n_test, data_cfg.image_size,
                                   data_cfg.subset_seed)
    train_data, test_data = load_cifar10(path)
    factor = 32 // data_cfg.image_size
    out = []
    for d, n in ((train_data, data_cfg.train_samples), (test_data, data_cfg.test_samples)):
        if n:
            d = d.take(np.arange(min(n, len(d))))
        if factor > 1:
            d = dataclasses.replace(d, images=downscale(d.images, factor).astype(np.float32))
        out.append(d)
    return tuple(out)


def calibration_indices(n, count, seed):
    rng = make_rng(derive_seed(seed, "calibration"))
    return np.sort(rng.choice(n, size=min(count, n), replace=False))


def evaluate_quantized(network, record, test_data, quant_cfg):
    """fp32 vs simulated quint8 on the test set: accuracies, QMSE and QCE over softmax outputs."""
    p_fp32 = network.predict_proba(test_data.images)
    p_q = quantized_inference(network, record, test_data.images, bits=quant_cfg.bits,
                              quantize_dense=quant_cfg.quantize_dense)
    acc_fp32 = float(np.mean(p_fp32.argmax(axis=1) == test_data.labels))
    acc_q = float(np.mean(p_q.argmax(axis=1) == test_data.labels))
    return {
        "acc_fp32": acc_fp32,
        "acc_q": acc_q,
        "qmse": qmse(p_fp32, p_q),
        "qce": qce(p_fp32, p_q),
        "rel_drop": relative_degradation(acc_fp32, acc_q) if acc_fp32 > 0 else float("nan"),
    }


def run_config(scheme, run_cfg, train_data, test_data, out_dir, master_seed=0):
    """Full pipeline for one scheme. Artifacts go to ``out_dir/<label>``; returns a SweepRow."""
    plan = build_plan(run_cfg.macro, scheme)
    config_hash = run_cfg.digest(scheme.token)
    seed = derive_seed(master_seed, config_hash)
    row = SweepRow(scheme.label, scheme.token, network_macs(plan), seed, config_hash)
    cfg_dir = os.path.join(out_dir, scheme.label)
    os.makedirs(cfg_dir, exist_ok=True)

    network = build_network(run_cfg.macro, scheme, make_rng(seed))
    train_cfg = dataclasses.replace(run_cfg.train, seed=seed)
    _, history = train(network, train_data, train_cfg, test_data)
    write_history_csv(history, os.path.join(cfg_dir, "history.csv"))
    row.history_path = os.path.join(scheme.label, "history.csv")
    save_checkpoint(network, os.path.join(cfg_dir, "checkpoint"))

    idx = calibration_indices(len(train_data), run_cfg.quant.calib_samples, seed)
    calib = train_data.images[idx]
    record = calibrate(network, calib, run_cfg.quant.clip_pct)
    record.save(os.path.join(cfg_dir, "calibration.json"))
    for key, value in evaluate_quantized(network, record, test_data, run_cfg.quant).items():
        setattr(row, key, value)

    row.layer_stats = introspect.collect_layer_report(network, calib, calibration=record)
    return row


def ensure_writable(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)


def run_sweep(run_cfg, schemes, train_data, test_data, out_dir, master_seed=0, formats=("csv", "json")):
    """Run every scheme; a failing config is recorded, never fatal. Returns the SweepReport."""
    ensure_writable(out_dir)
    report = SweepReport(master_seed=master_seed, run_config=run_cfg.to_dict())
    for scheme in schemes:
        log.info("sweep: %s", scheme.label)
        try:
            row = run_config(scheme, run_cfg, train_data, test_data, out_dir, master_seed)
        except Exception as exc:  # recorded per config, the sweep continues
            log.error("config %s failed: %s", scheme.label, exc)
            try:
                macs = network_macs(build_plan(run_cfg.macro, scheme))
            except Exception:
                macs = -1
            config_hash = run_cfg.digest(scheme.token)
            row = SweepRow(scheme.label, scheme.token, macs, derive_seed(master_seed, config_hash), config_hash,
                           status="failed", error=f"{type(exc).__name__}: {exc}")
            with open(os.path.join(out_dir, f"{scheme.label}.error.txt"), "w") as fh:
                fh.write(traceback.format_exc())
        report.rows.append(row)
    emit_report(report, out_dir, formats)
    return report


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report, out_dir, formats=("csv", "json")):
    """Write summary.{csv,json} and the per-config layerwise files ``<label>/layers.{csv,json}``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if "csv" in formats:
        path = os.path.join(out_dir, "summary.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_FIELDS)
            for r in report.rows:
                writer.writerow([_fmt(getattr(r, k)) for k in SUMMARY_FIELDS])
        paths.append(path)
        for r in report.rows:
            if r.layer_stats:
                cfg_dir = os.path.join(out_dir, r.label)
                os.makedirs(cfg_dir, exist_ok=True)
                introspect.write_report_csv(r.layer_stats, os.path.join(cfg_dir, "layers.csv"))
    if "json" in formats:
        path = os.path.join(out_dir, "summary.json")
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1, default=float)
        paths.append(path)
        for r in report.rows:
            if r.layer_stats:
                introspect.write_report_json(r.layer_stats, os.path.join(out_dir, r.label, "layers.json"))
    return paths


def read_summary_csv(path):
    """Parse summary.csv back into dicts with numeric columns converted."""
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            d["macs"] = int(d["macs"])
            d["seed"] = int(d["seed"])
            for k in ("acc_fp32", "acc_q", "qmse", "qce", "rel_drop"):
                d[k] = float(d[k])
            rows.append(d)
    return rows


def mac_rows(plan):
    """Rows for the ``macs`` command. ``macs_f1`` is the same layer unfactorized, so macs * f == macs_f1."""
    out = []
    for name, role, spec, macs in mac_table(plan):
        out.append({"layer": name, "role": role, "K": spec.K, "H": spec.H, "W": spec.W, "C_in": spec.C_in,
                    "C_out": spec.C_out, "f": spec.f, "macs": macs,
                    "macs_f1": layer_macs(dataclasses.replace(spec, f=1))})
    return out
