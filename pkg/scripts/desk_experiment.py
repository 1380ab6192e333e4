"""Train every model on the synthetic five-family corpus and print a table.

    python3 scripts/desk_experiment.py --per-class 100 --seed 1 --epochs 50 --out desk-runs

Runs go through the command-line entry point, so each model directory keeps
its manifest, metrics and checkpoint.
"""
import argparse
import json
from pathlib import Path

from malgnn.cli import ARCH_DEFAULTS
from malgnn.cli import main as malgnn


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int, default=50, help="epochs for the message-passing models")
    p.add_argument("--out", default="desk-runs")
    p.add_argument("--models", nargs="*", default=list(ARCH_DEFAULTS))
    args = p.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    print(f"{'model':<9}{'val':>8}{'test':>8}{'macro-F1':>10}{'seconds':>9}")
    for name in args.models:
        out = root / name
        argv = ["train", "--synthetic", str(args.per_class), "--arch", name,
                "--seed", str(args.seed), "--out", str(out)]
        if name not in ("mlp", "wl", "feather"):
            argv += ["--epochs", str(args.epochs)]
        if malgnn(argv) != 0:
            print(f"{name:<9}failed")
            continue
        m = json.loads((out / "metrics.json").read_text())
        sec = json.loads((out / "timing.json").read_text())["runtime_seconds"]
        print(f"{name:<9}{m['val']['accuracy']:>8.3f}{m['test']['accuracy']:>8.3f}"
              f"{m['test']['macro_f1']:>10.3f}{sec:>9.1f}", flush=True)


if __name__ == "__main__":
    main()
