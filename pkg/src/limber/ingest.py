"""Analysis bundles built from externally produced features and captions.

A bundle needs no model artifacts: a LIMB feature dump (tensors ``features``
[N x h_I] and ``ids`` [N]), a captions JSONL file, a role-tagged lexicon and a
taxonomy. Any further tensors named ``features.<name>`` in the dump are kept
as extra feature sets for RSA.

Caption rows look like ``{"id": ..., "output": generated caption,
"references": [...]}``; ``"caption"`` is accepted for ``"output"`` and
``"gold"`` for ``"references"``. An optional ``"label"`` enables a
category probe.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, container
from .metrics import lexical, probes, rsa
from .report import write_csv
from .taxonomy import Taxonomy


@dataclass
class AnalysisBundle:
    ids: list[str]
    features: np.ndarray
    outputs: list[str]
    references: list[list[str]]
    lexicon: list[lexical.LexiconEntry]
    taxonomy: Taxonomy
    labels: list[str] | None = None
    extra_features: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def h_I(self) -> int:
        return int(self.features.shape[1])


def _id(value) -> str:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return str(value)


def ingest_external(features_file, captions_file, lexicon_file, taxonomy_file) -> AnalysisBundle:
    tensors = container.load(features_file)
    if "features" not in tensors or "ids" not in tensors:
        raise container.IntegrityError("feature dump needs tensors 'features' and 'ids'")
    feats = tensors["features"]
    if feats.ndim != 2:
        raise container.IntegrityError(f"features must be [N x h_I], got shape {feats.shape}")
    ids = [_id(float(v)) for v in tensors["ids"].reshape(-1)]
    if len(ids) != len(feats):
        raise container.IntegrityError(f"{len(ids)} ids for {len(feats)} feature rows")
    rows = [json.loads(line) for line in Path(captions_file).read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(rows) != len(feats):
        raise container.IntegrityError(f"{len(rows)} caption rows for {len(feats)} feature rows")
    by_id = {}
    for r in rows:
        by_id[_id(r["id"])] = r
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise container.IntegrityError(f"caption file lacks ids {missing[:5]}")
    ordered = [by_id[i] for i in ids]
    outputs = [r.get("output", r.get("caption", "")) for r in ordered]
    refs = []
    for r in ordered:
        g = r.get("references", r.get("gold"))
        if g is None:
            raise container.IntegrityError(f"caption row {r['id']} has no references")
        refs.append([g] if isinstance(g, str) else list(g))
    labels = [str(r["label"]) for r in ordered] if all("label" in r for r in ordered) else None
    extra = {k.split(".", 1)[1]: v.reshape(len(v), -1) for k, v in tensors.items() if k.startswith("features.")}
    for k, v in extra.items():
        if len(v) != len(feats):
            raise container.IntegrityError(f"feature set {k} has {len(v)} rows, expected {len(feats)}")
    taxonomy = Taxonomy.load(taxonomy_file)
    lex = lexical.load_lexicon(lexicon_file)
    for e in lex:
        if e.role == "noun" and e.node is not None and e.node not in taxonomy:
            raise container.IntegrityError(f"lexicon node {e.node!r} for {e.word!r} is not in the taxonomy")
    return AnalysisBundle(ids, np.asarray(feats, dtype=np.float32), outputs, refs, lex, taxonomy, labels, extra)


def _bow(texts, words) -> np.ndarray:
    index = {w: i for i, w in enumerate(words)}
    out = np.zeros((len(texts), len(words)))
    for i, t in enumerate(texts):
        for w in t.lower().split():
            if w in index:
                out[i, index[w]] += 1
    return out


def analyze_bundle(bundle: AnalysisBundle, out_dir, probe_config: probes.ProbeConfig | None = None,
                   seed: int = 0) -> Path:
    """Lexical P/R/F1 with Wup, RSA and (when labels exist) a category probe."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = lexical.lexical_prf(bundle.outputs, bundle.references, bundle.lexicon, bundle.taxonomy)
    outputs = [
        write_csv(out / "lexical_words.csv", ["word", "role", "tp", "fp", "fn", "precision", "recall", "f1"],
                  [[s.word, s.role, s.tp, s.fp, s.fn, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}"]
                   for s in rep.words]),
        write_csv(out / "lexical_roles.csv", ["role", "precision", "recall", "f1", "mean_max_wup"],
                  [[role, *(f"{rep.roles[role][m]:.6f}" for m in ("precision", "recall", "f1")),
                    f"{rep.mean_max_wup:.6f}"] for role in lexical.ROLES if role in rep.roles]),
    ]
    sets = {"features": bundle.features.reshape(len(bundle.features), -1), **bundle.extra_features}
    vocab = sorted({e.word for e in bundle.lexicon})
    text = _bow([" ".join(r) for r in bundle.references], vocab)
    if np.all(np.linalg.norm(text, axis=1) > 0):
        sets["reference_words"] = text
    names = list(sets)
    rsa_rows = []
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            try:
                rsa_rows.append([a, b, f"{rsa.rsa(sets[a], sets[b]):.6f}"])
            except rsa.UndefinedError:
                rsa_rows.append([a, b, ""])
    outputs.append(write_csv(out / "rsa.csv", ["a", "b", "rsa"], rsa_rows))
    if bundle.labels is not None:
        classes = sorted(set(bundle.labels))
        y = np.array([classes.index(l) for l in bundle.labels])
        order = np.random.default_rng(seed).permutation(len(y))
        cut = int(len(y) * 0.8)
        tr, te = order[:cut], order[cut:]
        cfg = probe_config or probes.ProbeConfig(seed=seed)
        p = probes.train_probe(bundle.features[tr], y[tr], cfg, len(classes))
        res = probes.eval_probe(p, bundle.features[te], y[te])
        outputs.append(write_csv(out / "probe.csv", ["target", "macro_f1", "accuracy", "n_classes"],
                                 [["label", f"{res['macro_f1']:.6f}", f"{res['accuracy']:.6f}", len(classes)]]))
    manifest = {"stage": "analyze", "version": __version__, "rows": len(bundle.ids), "h_I": bundle.h_I,
                "outputs": sorted(p.name for p in outputs),
                "timestamps": {"finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                               "wall_clock_s": round(time.time() - t0, 3)}}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
