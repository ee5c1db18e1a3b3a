"""Analyse features and captions produced elsewhere, with no trained models.

Writes a synthetic bundle (features with four loose clusters, captions that
name the wrong animal one time in five) and runs ``limber analyze`` on it.

    python demos/bundle_analysis.py [out_dir]
"""
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from limber import container
from limber.cli import main

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="limber-bundle-"))
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)
n, animals = 200, ["dog", "cat", "bird", "fish"]
labels = np.arange(n) % 4
feats = rng.normal(size=(n, 32)).astype(np.float32)
feats[np.arange(n), labels] += 4.0
container.save(out / "features.limb", {"features": feats, "ids": np.arange(n, dtype=np.float32)})
with open(out / "captions.jsonl", "w") as f:
    for i in range(n):
        said = animals[(labels[i] + (i % 5 == 0)) % 4]
        f.write(json.dumps({"id": i, "output": f"a picture of a {said} running",
                            "references": [f"a picture of a {animals[labels[i]]} running"],
                            "label": animals[labels[i]]}) + "\n")
(out / "lexicon.tsv").write_text("".join(f"{a}\tnoun\t{a}\n" for a in animals) + "running\trelation\t\n")
(out / "taxonomy.tsv").write_text("animal\tentity\nmammal\tanimal\ndog\tmammal\ncat\tmammal\n"
                                  "bird\tanimal\nfish\tanimal\n")
code = main(["analyze", "--features", str(out / "features.limb"), "--captions", str(out / "captions.jsonl"),
             "--lexicon", str(out / "lexicon.tsv"), "--taxonomy", str(out / "taxonomy.tsv"),
             "--out", str(out / "analysis")])
for name in ("lexical_roles.csv", "rsa.csv", "probe.csv"):
    print(f"\n{name}\n" + (out / "analysis" / name).read_text())
sys.exit(code)
