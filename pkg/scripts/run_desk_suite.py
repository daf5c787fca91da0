"""Run every experiment at desk scale and print one line of headline numbers per run.

Dataset runs are included only for the roots that are given:

    python3 scripts/run_desk_suite.py --out runs --mnist-root /data/mnist --cifar-root /data/cifar-10-batches-bin
"""
import argparse
import json
from pathlib import Path

from sepconc.cli import main as cli


def run(name, argv, out):
    target = out / name
    code = cli(argv + ["--out", str(target)])
    path = target / "summary.json"
    summary = json.loads(path.read_text()) if path.exists() else {}
    return code, summary


def headline(summary):
    keys = ("test_error", "fisher_before", "fisher_after", "fisher", "min_biasfree_test_err",
            "max_sign_changes", "control_test_err", "frames_ok")
    parts = [f"{k}={summary[k]:.4g}" if isinstance(summary.get(k), float) else f"{k}={summary[k]}"
             for k in keys if k in summary]
    for e in summary.get("exponents", []):
        parts.append(f"s={e['s']}: {e['fitted_exponent']:.2f}/{e['theory_exponent']:.2f}")
    return " ".join(parts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--mnist-root")
    ap.add_argument("--cifar-root")
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    out = Path(args.out)
    seed = ["--seed", args.seed]
    jobs = [("theorem1", ["theorem1"] + seed), ("counterexample", ["counterexample"] + seed)]
    if args.mnist_root:
        jobs.append(("two-layer-mnist", ["two-layer", "--dataset", "mnist", "--data-root", args.mnist_root,
                                         "--rho", "abs"] + seed))
    if args.cifar_root:
        for rho in ("relu_t", "soft", "none"):
            jobs.append((f"two-layer-cifar-{rho}", ["two-layer", "--dataset", "cifar10", "--data-root", args.cifar_root,
                                                    "--rho", rho, "--subset", "10000"] + seed))
        for variant in ("tree", "projected", "concentrated"):
            jobs.append((f"scattering-cifar-{variant}", ["scattering", "--dataset", "cifar10", "--data-root",
                                                         args.cifar_root, "--variant", variant, "--subset", "10000"] + seed))
    for name, argv in jobs:
        code, summary = run(name, argv, out)
        print(f"{name:28s} exit={code} {headline(summary)}")


if __name__ == "__main__":
    main()
