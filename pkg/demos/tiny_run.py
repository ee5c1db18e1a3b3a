"""Run every stage on a very small world and print the headline tables.

    python demos/tiny_run.py [out_dir]

Takes well under a minute. The numbers mean little at this size; the point is
to see which files each stage leaves behind.
"""
import csv
import json
import sys
import tempfile
from pathlib import Path

from limber.cli import main

TINY = {
    "data": {"n_train": 2000, "n_val": 200, "n_test": 100, "lm_docs": 2000},
    "lm": {"steps": 50},
    "encoders": {v: {"steps": 30} for v in ("classifier", "contrastive", "ssl")},
    "limber": {"steps": 30},
    "vqa": {"shots": [0, 2], "n_questions": 40, "pool_size": 50},
    "probe": {"max_epochs": 5},
}


def show(path: Path) -> None:
    print(f"\n{path}")
    with open(path, newline="") as f:
        for row in csv.reader(f):
            print("  " + "  ".join(f"{c:>12}" for c in row[:7]))


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="limber-"))
    cfg = out.parent / f"{out.name}-config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg.write_text(json.dumps(TINY))
    if main(["run-all", "--seed", "1", "--config", str(cfg), "--out", str(out)]) != 0:
        sys.exit("run-all failed")
    for rel in ("eval/caption/captions.csv", "eval/vqa/vqa.csv", "reports/probe/probes.csv"):
        show(out / rel)
    top = json.loads((out / "manifest.json").read_text())
    print("\nstage manifests:", *top["stage_manifests"], sep="\n  ")
