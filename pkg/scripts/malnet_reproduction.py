"""Best grid configuration of every model on a local MalNet-Tiny copy.

    python3 scripts/malnet_reproduction.py --data ~/malnet-graphs-tiny --out runs/

Each model is trained through the command-line entry point, so every run
directory holds the usual manifest, metrics, history and checkpoint.
"""
import argparse
import json
from pathlib import Path

from malgnn.cli import main as malgnn

# validation accuracy reported for the reference implementation
REFERENCE = {
    "gcn": 0.9582, "sage": 0.7913, "gin": 0.9407, "sgc": 0.9079,
    "jk-gcn": 0.8941, "jk-sage": 0.9291, "jk-gin": 0.9769,
    "mlp": 0.8054, "wl": 0.7053, "feather": 0.8488,
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="malnet-runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--models", nargs="*", default=list(REFERENCE))
    args = p.parse_args()

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in args.models:
        out = root / name
        code = malgnn(["train", "--data", args.data, "--arch", name, "--seed", str(args.seed), "--out", str(out)])
        if code != 0:
            rows.append((name, None, None, None))
            continue
        val = json.loads((out / "metrics.json").read_text())["val"]
        seconds = json.loads((out / "timing.json").read_text())["runtime_seconds"]
        rows.append((name, val["accuracy"], val["macro_f1"], seconds))

    print(f"{'model':<9}{'val acc':>9}{'reference':>11}{'macro-F1':>10}{'seconds':>10}")
    for name, acc, f1, sec in rows:
        if acc is None:
            print(f"{name:<9}{'failed':>9}{REFERENCE[name]:>11.4f}")
        else:
            print(f"{name:<9}{acc:>9.4f}{REFERENCE[name]:>11.4f}{f1:>10.4f}{sec:>10.0f}")


if __name__ == "__main__":
    main()
