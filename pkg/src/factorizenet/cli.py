"""Train, quantize and analyze depth-factorized CNNs from the command line."""

import argparse
import csv
import json
import logging
import os
import sys

from . import introspect
from .arch import DepthwiseSeparable, Regular, build_network, build_plan, network_macs, parse_scheme_list, progression
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, desk_run_config, load_config
from .errors import ConfigurationError, FactorizeNetError
from .nn.init import make_rng
from .quant import calibrate
from .sweep import calibration_indices, evaluate_quantized, load_data, mac_rows, run_sweep
from .train import evaluate, train, write_history_csv

log = logging.getLogger("factorizenet")

DEFAULT_DATA = os.environ.get("FACTORIZENET_DATA", "data/cifar-10-batches-bin")


def _schemes(text):
    try:
        schemes = parse_scheme_list(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    if not schemes:
        raise argparse.ArgumentTypeError("empty scheme list")
    return schemes


def _clip(text):
    try:
        lo, hi = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI percentiles, got {text!r}")
    if not 0 <= lo < hi <= 100:
        raise argparse.ArgumentTypeError("need 0 <= LO < HI <= 100")
    return lo, hi


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or key=value config file")
    common.add_argument("--preset", choices=("full", "desk"), default=None,
                        help="built-in config when --config is absent (default: full)")
    common.add_argument("--data", default=DEFAULT_DATA, help="directory with the CIFAR-10 binary batches")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="training seed; the master seed for sweep")
    common.add_argument("--epochs", type=int, default=None,
                        help="override epochs (LR drops at or after this epoch are dropped)")
    common.add_argument("--calib-samples", type=int, default=None,
                        help="training samples used for calibration (default 1024)")
    common.add_argument("--clip-pct", type=_clip, default=None, metavar="LO,HI",
                        help="activation percentile clipping (default 1,99)")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format (sweep writes both by default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="factorizenet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("macs", parents=[common], help="print the conv MAC table for one or more schemes")
    p.add_argument("--scheme", type=_schemes, default=[Regular()],
                   help="comma-separated: regular, uniform:F, revpyr:F, dws")

    p = sub.add_parser("train", parents=[common], help="train one configuration and save a checkpoint")
    p.add_argument("--scheme", type=_schemes, default=[Regular()], help="one scheme token")

    p = sub.add_parser("sweep", parents=[common], help="train and analyze a progression of schemes")
    p.add_argument("--scheme", type=_schemes, default=None, help="comma-separated schemes")
    p.add_argument("--progression", choices=("uniform_doubling", "reverse_pyramid_doubling"), default=None)
    p.add_argument("--endpoints", action="store_true", help="bracket the progression with regular and dws")

    for name, text in (("analyze", "layerwise range/precision report for a checkpoint"),
                       ("quantize", "calibrate a checkpoint and evaluate it in simulated quint8")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("checkpoint", help="checkpoint directory (manifest.json + params.bin)")
    return parser


def resolve_config(args):
    if args.config:
        cfg = load_config(args.config)
    elif args.preset == "desk":
        cfg = desk_run_config()
    else:
        cfg = RunConfig()
    train_over, quant_over = {}, {}
    if args.epochs is not None:
        drops = tuple(d for d in cfg.train.lr_drop_epochs if d < args.epochs)
        train_over.update(epochs=args.epochs, lr_drop_epochs=drops)
    if args.seed is not None:
        train_over["seed"] = args.seed
    if args.calib_samples is not None:
        quant_over["calib_samples"] = args.calib_samples
    if args.clip_pct is not None:
        quant_over["clip_pct"] = args.clip_pct
    return cfg.replace(train=train_over, quant=quant_over)


def _write_rows(rows, path, fmt):
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1)
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_macs(args, cfg):
    for scheme in args.scheme:
        plan = build_plan(cfg.macro, scheme)
        rows = mac_rows(plan)
        if args.format == "json":
            print(json.dumps({"scheme": scheme.label, "total": network_macs(plan), "layers": rows}, indent=1))
            continue
        if args.format == "csv":
            writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
            continue
        print(f"{scheme.label} ({scheme.token})")
        print(f"{'layer':<14}{'role':<12}{'K':>3}{'HxW':>9}{'C_in':>6}{'C_out':>6}{'f':>5}{'MACs':>14}{'MACs@f=1':>14}")
        for r in rows:
            hw = f"{r['H']}x{r['W']}"
            print(f"{r['layer']:<14}{r['role']:<12}{r['K']:>3}{hw:>9}{r['C_in']:>6}{r['C_out']:>6}{r['f']:>5}"
                  f"{r['macs']:>14,}{r['macs_f1']:>14,}")
        print(f"{'total':<14}{'':<49}{network_macs(plan):>14,}\n")
    return 0


def cmd_train(args, cfg):
    if len(args.scheme) != 1:
        raise ConfigurationError("train takes exactly one scheme")
    scheme = args.scheme[0]
    train_data, test_data = load_data(cfg.data, args.data)
    network = build_network(cfg.macro, scheme, make_rng(cfg.train.seed))
    _, history = train(network, train_data, cfg.train, test_data)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(network, os.path.join(args.out, "checkpoint"))
    write_history_csv(history, os.path.join(args.out, "history.csv"))
    print(f"{scheme.label}: test accuracy {evaluate(network, test_data):.4f}")
    return 0


def cmd_sweep(args, cfg):
    schemes = list(args.scheme or [])
    if args.progression:
        schemes += progression(args.progression)
    if args.endpoints:
        schemes = [Regular()] + [s for s in schemes if s.kind not in ("regular", "dws")] + [DepthwiseSeparable()]
    if not schemes:
        raise ConfigurationError("sweep needs --scheme and/or --progression")
    train_data, test_data = load_data(cfg.data, args.data)
    formats = (args.format,) if args.format else ("csv", "json")
    seed = cfg.train.seed
    report = run_sweep(cfg, schemes, train_data, test_data, args.out, seed, formats)
    for r in report.rows:
        if r.ok:
            print(f"{r.label:<24}{r.macs:>14,}  fp32 {r.acc_fp32:.4f}  quint8 {r.acc_q:.4f}  rel_drop {r.rel_drop:.4f}")
        else:
            print(f"{r.label:<24}{r.macs:>14,}  FAILED: {r.error}")
    return 1 if report.failed else 0


def _calibration_set(cfg, args, network):
    train_data, test_data = load_data(cfg.data, args.data)
    expected = network.plan.cfg.input_shape if network.plan else None
    if expected is not None and tuple(train_data.images.shape[1:]) != tuple(expected):
        raise ConfigurationError(f"data shape {train_data.images.shape[1:]} does not match checkpoint input {expected}")
    idx = calibration_indices(len(train_data), cfg.quant.calib_samples, cfg.train.seed)
    return train_data.images[idx], test_data


def cmd_analyze(args, cfg):
    network, _ = load_checkpoint(args.checkpoint)
    calib, _ = _calibration_set(cfg, args, network)
    report = introspect.collect_layer_report(network, calib, cfg.quant.clip_pct)
    os.makedirs(args.out, exist_ok=True)
    fmt = args.format or "csv"
    path = os.path.join(args.out, f"layers.{fmt}")
    if fmt == "csv":
        introspect.write_report_csv(report, path)
    else:
        introspect.write_report_json(report, path)
    for s in report:
        print(f"{s.layer_name:<14}{s.kind:<17}[{s.tensor_range[0]:+.4f}, {s.tensor_range[1]:+.4f}]  "
              f"precision {s.avg_precision:.4f}")
    print(f"wrote {path}")
    return 0


def cmd_quantize(args, cfg):
    network, _ = load_checkpoint(args.checkpoint)
    calib, test_data = _calibration_set(cfg, args, network)
    record = calibrate(network, calib, cfg.quant.clip_pct)
    metrics = evaluate_quantized(network, record, test_data, cfg.quant)
    os.makedirs(args.out, exist_ok=True)
    record.save(os.path.join(args.out, "calibration.json"))
    fmt = args.format or "csv"
    _write_rows([metrics], os.path.join(args.out, f"quantize.{fmt}"), fmt)
    print("  ".join(f"{k} {v:.6g}" for k, v in metrics.items()))
    return 0


COMMANDS = {"macs": cmd_macs, "train": cmd_train, "sweep": cmd_sweep, "analyze": cmd_analyze,
            "quantize": cmd_quantize}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigurationError, OSError) as exc:
        parser.error(str(exc))
    try:
        return COMMANDS[args.command](args, cfg)
    except (FactorizeNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
