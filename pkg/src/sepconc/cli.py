"""Command-line experiment runner.

Exit codes: 0 success, 1 assertion or acceptance failure, 2 usage error, 3 data error.
"""
import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import gmm
from .config import SUBCOMMANDS, ExperimentConfig, format_value, parse_value, read_config
from .data import load_pair, make_augment
from .errors import ConfigurationError, DataFormatError, DimensionError, InvariantError, InvalidWitnessError, TrainingError
from .fisher import LabeledBatch, compute_stats, report_row, write_report
from .scattering import ScatteringConfig, ScatteringState, fisher_per_layer
from .theory import CounterexampleConfig, counterexample_experiment
from .train import OptimizerConfig, TwoLayerConfig, train_scattering, train_two_layer

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
PAPER_DIMS = (64, 128, 256, 512)
PAPER_WIDTHS = (1024, 2048, 4096, 8192)


class UsageError(Exception):
    pass


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="BLAS threads (recorded in outputs)")
    common.add_argument("--out", help="output directory")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="full", action="store_false", default=None,
                       help="reduced protocol (default)")
    scale.add_argument("--full", dest="full", action="store_true", default=None, help="full protocol")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", choices=("mnist", "cifar10"))
    data.add_argument("--data-root", help="directory holding the dataset files")
    data.add_argument("--subset", type=int, help="stratified training subset size")
    data.add_argument("--epochs", type=int)
    data.add_argument("--lr", type=float)
    data.add_argument("--batch-size", type=int)
    data.add_argument("--augment", type=parse_value, help="true/false (CIFAR flips and crops)")

    arch = argparse.ArgumentParser(add_help=False)
    arch.add_argument("--variant", choices=("tree", "projected", "concentrated"))
    arch.add_argument("--J", type=int)
    arch.add_argument("--L", type=int)
    arch.add_argument("--order", type=int)
    arch.add_argument("--dims", type=parse_value, help="comma-separated d_j")
    arch.add_argument("--widths", type=parse_value, help="comma-separated p_j")
    arch.add_argument("--tree-dim", type=int)
    arch.add_argument("--nonlinearity", choices=("soft", "relu_t", "soft_threshold", "thresholded_relu"))

    ap = argparse.ArgumentParser(prog="sepconc", description="separation and concentration experiments")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("two-layer", parents=[common, data], help="patch tight-frame network")
    p.add_argument("--rho", choices=("abs", "relu", "soft", "relu_t", "none"))
    p.add_argument("--p", type=int, help="frame width")
    p.add_argument("--k", type=int, help="patch side")
    sub.add_parser("scattering", parents=[common, data, arch], help="scattering networks")
    p = sub.add_parser("theorem1", parents=[common], help="thresholding concentration sweeps")
    p.add_argument("--s-values", type=parse_value)
    p.add_argument("--sigmas", type=parse_value)
    p.add_argument("--sweep-dim", type=int)
    p.add_argument("--sweep-dims", type=parse_value)
    p.add_argument("--sweep-n", type=int)
    p = sub.add_parser("counterexample", parents=[common], help="radial counterexample")
    p.add_argument("--d", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--frame", choices=("bounded", "tight"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--control", dest="control", action="store_true", default=None)
    p.add_argument("--no-control", dest="control", action="store_false")
    p = sub.add_parser("fisher-report", parents=[common, data, arch], help="Fisher ratios per layer")
    p.add_argument("--state", help="scattering state checkpoint (omit for the raw input)")
    return ap


def resolve(args):
    """Defaults < config file < flags, then protocol-dependent defaults."""
    values = {}
    if args.config:
        values.update(read_config(args.config))
    for k, v in vars(args).items():
        if k in ("config",) or v is None:
            continue
        values[k] = v
    values["subcommand"] = args.subcommand
    if isinstance(values.get("dims"), int):
        values["dims"] = (values["dims"],)
    if isinstance(values.get("widths"), int):
        values["widths"] = (values["widths"],)
    cfg = ExperimentConfig.from_mapping(values)
    return fill_defaults(cfg)


def fill_defaults(cfg):
    full = cfg.full
    sc = cfg.subcommand
    if sc in ("two-layer", "scattering", "fisher-report"):
        ds = cfg.dataset or ("mnist" if sc == "two-layer" else "cifar10")
        cfg = replace(cfg, dataset=ds)
        cifar = ds == "cifar10"
        if cfg.subset is None and cifar and not full:
            cfg = replace(cfg, subset=10_000)
        if cfg.augment is None:
            cfg = replace(cfg, augment=cifar)
    if sc == "two-layer":
        cifar = cfg.dataset == "cifar10"
        cfg = replace(
            cfg,
            k=cfg.k or (8 if cifar else 14),
            p=cfg.p or (8192 if cifar and full else 2048),
            epochs=cfg.epochs or (300 if full else (60 if cifar else 20)),
        )
    if sc in ("scattering", "fisher-report"):
        cifar = cfg.dataset == "cifar10"
        tree = cfg.variant == "tree"
        J = cfg.J or (4 if cifar and not tree else 3)
        half = 1 if full else 2
        dims = cfg.dims or tuple(d // half for d in _per_stage(PAPER_DIMS, J))
        widths = cfg.widths or tuple(p // half for p in _per_stage(PAPER_WIDTHS, J))
        cfg = replace(cfg, J=J, dims=dims, widths=widths, tree_dim=cfg.tree_dim or 512 // half,
                      epochs=cfg.epochs or (300 if full else 40))
    if sc == "counterexample" and cfg.epochs is None:
        cfg = replace(cfg, epochs=CounterexampleConfig().opt.epochs)
    return cfg


def _per_stage(values, J):
    """First ``J`` entries, repeating the last one for deeper networks."""
    return tuple(values[:J]) + (values[-1],) * max(0, J - len(values))


def _opt(cfg):
    base = OptimizerConfig(lr=cfg.lr, batch_size=cfg.batch_size)
    return base if cfg.epochs == base.epochs else base.scaled(cfg.epochs)


def _need_data(cfg):
    if cfg.data_root is None:
        raise UsageError(f"--data-root is required for dataset {cfg.dataset!r}")


def _image_data(cfg, pad=None):
    _need_data(cfg)
    cache = Path(cfg.out) / "standardization.bin" if cfg.out else None
    return load_pair(cfg.dataset, cfg.data_root, cfg.subset, cfg.seed, pad, cache)


def _scattering_config(cfg, train):
    c, h, w = train.samples.shape[1:]
    order = math.inf if cfg.order is None else cfg.order
    return ScatteringConfig(
        J=cfg.J, L=cfg.L, order=order, variant=cfg.variant, dims=tuple(cfg.dims), widths=tuple(cfg.widths),
        nonlinearity=cfg.nonlinearity, in_channels=c, image_size=(h, w), tree_dim=cfg.tree_dim,
    )


def cmd_two_layer(cfg):
    train, test = _image_data(cfg)
    rho = None if cfg.rho == "none" else cfg.rho
    arch = TwoLayerConfig(k=cfg.k, p=cfg.p, rho=rho)
    aug = make_augment() if cfg.augment else None
    _, summary, _ = train_two_layer(train, test, arch, _opt(cfg), cfg.seed, aug, cfg.out)
    return summary, summary["frames_ok"]


def cmd_scattering(cfg):
    pad = 2**cfg.J if cfg.dataset == "mnist" else None
    train, test = _image_data(cfg, pad)
    scfg = _scattering_config(cfg, train)
    aug = make_augment() if cfg.augment else None
    _, summary, _ = train_scattering(train, test, scfg, _opt(cfg), cfg.seed, aug, cfg.out)
    if cfg.out:
        write_report(Path(cfg.out) / "fisher_layers.csv", _report_rows(scfg, summary))
    summary["fisher_per_layer"] = [[l, f] for l, f in summary["fisher_per_layer"]]
    return summary, summary["frames_ok"]


def _report_rows(scfg, summary):
    return [{"layer_index": l, "fisher_ratio": f, "trace_sigma_w": float("nan"), "trace_sigma_b": float("nan")}
            for l, f in summary["fisher_per_layer"]]


def cmd_fisher_report(cfg):
    pad = 2**cfg.J if cfg.dataset == "mnist" else None
    train, test = _image_data(cfg, pad)
    if cfg.state:
        scfg = _scattering_config(cfg, train)
        rows = [report_row(l, st) for l, _, st in
                fisher_per_layer(scfg, ScatteringState.load(cfg.state), test, return_stats=True)]
    else:
        rows = [report_row(0, compute_stats(test.flat(), keep_class_cov=False))]
    if cfg.out:
        write_report(Path(cfg.out) / "fisher_layers.csv", rows)
    return {"layers": rows}, True


def cmd_theorem1(cfg):
    sweeps, ok = [], True
    for s in cfg.s_values:
        sw = gmm.sigma_sweep(s, cfg.sweep_dim, cfg.sigmas, n=cfg.sweep_n, seed=cfg.seed)
        sw["within_tolerance"] = abs(sw["fitted_exponent"] - sw["theory_exponent"]) <= 0.4
        ok &= sw["within_tolerance"]
        sweeps.append(sw)
    disp = gmm.displacement_sweep(1.0, cfg.sigmas[1], cfg.sweep_dims, n=cfg.sweep_n, seed=cfg.seed)
    disp["sublinear"] = disp["loglog_slope_in_d"] < 1.0
    ok &= disp["sublinear"]
    basis = gmm.TightFrame(np.eye(cfg.sweep_dim))
    zero = gmm.concentration_experiment(
        gmm.sparse_model(gmm.SparsityProfile(1.0, 1.0, cfg.seed), basis, 2, 1, 0.0), basis, 50, cfg.seed, with_fisher=False
    )
    summary = {
        "exponents": [{k: sw[k] for k in ("s", "theory_exponent", "fitted_exponent", "within_tolerance")} for sw in sweeps],
        "sweeps": sweeps, "displacement": disp,
        "sigma_zero": {k: zero[k] for k in ("sigma", "lambda", "trace_w_before", "trace_w_after")},
    }
    return summary, bool(ok)


def cmd_counterexample(cfg):
    cc = CounterexampleConfig(
        d=cfg.d, seeds=cfg.seeds, lam=cfg.lam, frame=cfg.frame, control=cfg.control,
        opt=CounterexampleConfig().opt.scaled(cfg.epochs),
    )
    rows, passed = counterexample_experiment(cc)
    biasfree = [r for r in rows if not r["hidden_bias"]]
    summary = {
        "d": cc.d, "error_floor": cc.error_floor, "passed": passed, "rows": rows,
        "min_biasfree_test_err": min(r["test_err"] for r in biasfree),
        "max_sign_changes": max((r.get("max_sign_changes", 0) for r in biasfree), default=0),
        "control_test_err": rows[-1]["test_err"] if cc.control else None,
    }
    ok = passed and all(r["frames_ok"] for r in rows)
    return summary, ok


COMMANDS = {
    "two-layer": cmd_two_layer, "scattering": cmd_scattering, "theorem1": cmd_theorem1,
    "counterexample": cmd_counterexample, "fisher-report": cmd_fisher_report,
}


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return o


def run(cfg):
    """Execute one resolved experiment; returns ``(summary, ok)``."""
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.dump())
    try:
        with threadpool_limits(cfg.threads):
            summary, ok = COMMANDS[cfg.subcommand](cfg)
    except InvariantError as e:
        # the run finished but its checkpoint was refused; keep the record
        if cfg.out and getattr(e, "summary", None) is not None:
            _write_summary(cfg, {**e.summary, "failure": str(e)}, False)
        raise
    return _write_summary(cfg, summary, ok), ok


def _write_summary(cfg, summary, ok):
    summary = _jsonable(summary)
    summary["threads"] = cfg.threads
    summary["ok"] = bool(ok)
    if cfg.out:
        (Path(cfg.out) / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        cfg = resolve(args)
        print(cfg.dump(), end="")
        start = time.perf_counter()
        summary, ok = run(cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DimensionError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, InvalidWitnessError, TrainingError) as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    brief = {k: v for k, v in summary.items() if not isinstance(v, (list, dict))}
    for k, v in sorted(brief.items()):
        print(f"{k}: {format_value(v)}")
    print(f"elapsed_seconds: {time.perf_counter() - start:.1f}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
