"""Tables and figures merged across one or more run directories.

Figures are hand-written SVG with fixed number formatting, so identical
inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path
from typing import Sequence

from . import __version__


class MergeError(ValueError):
    pass


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def _key_paths(obj, prefix="") -> set[str]:
    if isinstance(obj, dict):
        out = set()
        for k, v in obj.items():
            out |= _key_paths(v, f"{prefix}.{k}" if prefix else k)
        return out
    return {prefix}


class RunTables:
    """The CSV tables of one completed run, keyed by file stem."""

    def __init__(self, run_dir, label: str):
        self.dir = Path(run_dir)
        self.label = label
        self.captions = read_csv(self.dir / "eval/caption/captions.csv")
        self.vqa = read_csv(self.dir / "eval/vqa/vqa.csv")
        self.probes = read_csv(self.dir / "reports/probe/probes.csv")
        self.roles = read_csv(self.dir / "reports/analyze/lexical_roles.csv")
        self.animals = read_csv(self.dir / "reports/analyze/animals.csv")
        self.confusions = read_csv(self.dir / "reports/analyze/confusions.csv")
        self.purity = read_csv(self.dir / "reports/analyze/purity.csv")


def _label_runs(run_dirs: Sequence) -> list[tuple[Path, str, dict]]:
    out, seen = [], {}
    for d in run_dirs:
        d = Path(d)
        cfg = {}
        manifest = None
        for cand in (d / "config.json", d / "world" / "manifest.json"):
            if cand.exists():
                data = json.loads(cand.read_text(encoding="utf-8"))
                cfg = data.get("config", data)
                manifest = cand
                break
        if manifest is None:
            raise MergeError(f"{d} is not a run directory (no config.json or world manifest)")
        base = f"seed{cfg.get('seed', '?')}"
        seen[base] = seen.get(base, 0) + 1
        label = base if seen[base] == 1 else f"{base}#{seen[base]}"
        out.append((d, label, cfg))
    schemas = {frozenset(_key_paths(c)) for _, _, c in out}
    if len(schemas) > 1:
        raise MergeError("runs were produced with incompatible configuration schemas")
    return out


def _table(runs: list[RunTables], attr: str, key_cols: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    cols: list[str] = []
    for r in runs:
        for row in getattr(r, attr):
            for c in row:
                if c not in cols and c not in key_cols:
                    cols.append(c)
    rows = []
    for r in runs:
        for row in getattr(r, attr):
            rows.append([r.label] + [row.get(k, "") for k in key_cols] + [row.get(c, "") for c in cols])
    return ["run", *key_cols, *cols], rows


def _shots_table(runs: list[RunTables]) -> tuple[list[str], list[list[str]]]:
    shots = sorted({int(row["shots"]) for r in runs for row in r.vqa}, key=int)
    rows = []
    for r in runs:
        by: dict[str, dict[int, str]] = {}
        order: list[str] = []
        for row in r.vqa:
            if row["variant"] not in by:
                order.append(row["variant"])
                by[row["variant"]] = {}
            by[row["variant"]][int(row["shots"])] = row["accuracy"]
        for v in order:
            rows.append([r.label, v] + [by[v].get(s, "") for s in shots])
    return ["run", "variant"] + [f"{s}_shot" for s in shots], rows


def _comparison(runs: list[RunTables]) -> tuple[list[str], list[list[str]]]:
    """One row per (run, encoder): caption metrics, best-shot VQA, probe F1, mention accuracy."""
    cols = ["run", "variant", "cider_d", "bleu1", "bleu4", "contrastive_score", "ref_contrastive_score",
            "vqa_4shot", "probe_category_f1", "animal_accuracy", "mistake_wup"]
    rows = []
    for r in runs:
        vqa4 = {row["variant"]: row["accuracy"] for row in r.vqa if row["shots"] == "4"}
        probe = {row["variant"]: row["macro_f1"] for row in r.probes if row["target"] == "category"}
        animals = {row["variant"]: row for row in r.animals}
        variants = [row["variant"] for row in r.captions] or list(probe)
        caps = {row["variant"]: row for row in r.captions}
        for v in variants:
            c = caps.get(v, {})
            a = animals.get(v, {})
            rows.append([r.label, v, c.get("cider_d", ""), c.get("bleu1", ""), c.get("bleu4", ""),
                         c.get("contrastive_score", ""), c.get("ref_contrastive_score", ""), vqa4.get(v, ""),
                         probe.get(v, ""), a.get("accuracy", ""), a.get("mistake_wup", "")])
    if any(r.vqa for r in runs):
        rows += [[r.label, "blind", "", "", "", "", "",
                  next((row["accuracy"] for row in r.vqa if row["variant"] == "blind" and row["shots"] == "4"), ""),
                  "", "", ""] for r in runs]
    return cols, rows


# SVG ---------------------------------------------------------------------------

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def _num(x: float) -> str:
    return f"{x:.2f}"


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def bar_chart(title: str, groups: Sequence[str], series: Sequence[str], values: dict, y_max: float | None = None,
              markers: dict | None = None) -> str:
    """Grouped bars; ``values[(group, series)]`` may be missing. ``markers[group]``
    draws a horizontal tick per group (used for mean max-Wup)."""
    width, height, left, bottom, top = 120 + 110 * max(1, len(groups)), 300, 50, 40, 30
    plot_h = height - top - bottom
    present = [v for v in values.values() if v is not None]
    y_max = y_max or (max(present + list((markers or {}).values()) + [1e-9]) * 1.1)
    body = [f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
            f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 10}" y2="{top + plot_h}" stroke="black"/>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>']
    for i in range(5):
        v = y_max * i / 4
        y = top + plot_h - plot_h * i / 4
        body.append(f'<text x="{left - 4}" y="{_num(y + 4)}" text-anchor="end">{v:.2f}</text>')
    gw = (width - left - 10) / max(1, len(groups))
    bw = gw * 0.8 / max(1, len(series))
    for gi, g in enumerate(groups):
        x0 = left + gi * gw + gw * 0.1
        for si, s in enumerate(series):
            v = values.get((g, s))
            if v is None:
                continue
            h = plot_h * min(v, y_max) / y_max
            body.append(f'<rect x="{_num(x0 + si * bw)}" y="{_num(top + plot_h - h)}" width="{_num(bw * 0.95)}" '
                        f'height="{_num(h)}" fill="{PALETTE[si % len(PALETTE)]}"><title>{g} {s} {v:.4f}</title></rect>')
        if markers and g in markers:
            y = top + plot_h - plot_h * min(markers[g], y_max) / y_max
            body.append(f'<line x1="{_num(x0)}" y1="{_num(y)}" x2="{_num(x0 + gw * 0.8)}" y2="{_num(y)}" '
                        f'stroke="black" stroke-width="2" stroke-dasharray="4 2"/>')
        body.append(f'<text x="{_num(x0 + gw * 0.4)}" y="{top + plot_h + 14}" text-anchor="middle">{g}</text>')
    for si, s in enumerate(series):
        y = top + plot_h + 28
        x = left + si * 90
        body.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{PALETTE[si % len(PALETTE)]}"/>')
        body.append(f'<text x="{x + 14}" y="{y}">{s}</text>')
    return _svg(width, height + 10, body)


def _f(x: str) -> float | None:
    try:
        return float(x)
    except (TypeError, ValueError):
        return None


def report(run_dirs: Sequence, out_dir, config=None) -> Path:
    """Merge runs into summary tables and figures; returns the manifest path."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = [RunTables(d, label) for d, label, _ in _label_runs(run_dirs)]
    outputs = []
    cols, rows = _comparison(runs)
    outputs.append(write_csv(out / "encoder_comparison.csv", cols, rows))
    cols, rows = _shots_table(runs)
    outputs.append(write_csv(out / "vqa_by_shots.csv", cols, rows))
    for attr, keys, name in (("roles", ["variant", "role"], "lexical_roles.csv"),
                             ("animals", ["variant"], "animals.csv"),
                             ("confusions", ["variant", "gold", "predicted"], "confusions.csv"),
                             ("probes", ["target", "variant"], "probes.csv"),
                             ("purity", ["variant"], "purity.csv")):
        cols, rows = _table(runs, attr, keys)
        outputs.append(write_csv(out / name, cols, rows))

    fig = out / "figures"
    fig.mkdir(exist_ok=True)
    # per-role recall with mean max-Wup, averaged over runs
    acc: dict = {}
    wup: dict = {}
    for r in runs:
        for row in r.roles:
            acc.setdefault((row["variant"], row["role"]), []).append(_f(row["recall"]))
            wup.setdefault(row["variant"], []).append(_f(row["mean_max_wup"]))
    variants = list(dict.fromkeys(v for v, _ in acc))
    roles = list(dict.fromkeys(role for _, role in acc))
    vals = {k: sum(x for x in v if x is not None) / max(1, sum(x is not None for x in v)) for k, v in acc.items()}
    marks = {k: sum(x for x in v if x is not None) / max(1, sum(x is not None for x in v)) for k, v in wup.items()}
    (fig / "role_recall.svg").write_text(bar_chart("recall by word role (dashed: mean max Wup)", variants, roles, vals,
                                                   1.0, marks), encoding="utf-8")
    outputs.append(fig / "role_recall.svg")
    cider = {}
    for r in runs:
        for row in r.captions:
            if _f(row.get("cider_d")) is not None:
                cider[(row["variant"], r.label)] = _f(row["cider_d"])
    groups = list(dict.fromkeys(v for v, _ in cider))
    (fig / "cider.svg").write_text(bar_chart("held-out CIDEr-D", groups, [r.label for r in runs], cider),
                                   encoding="utf-8")
    outputs.append(fig / "cider.svg")
    shots = {}
    for r in runs:
        for row in r.vqa:
            shots.setdefault((row["variant"], f"{row['shots']}-shot"), []).append(_f(row["accuracy"]))
    svals = {k: sum(v) / len(v) for k, v in shots.items() if all(x is not None for x in v)}
    (fig / "vqa_by_shots.svg").write_text(
        bar_chart("VQA accuracy by shots", list(dict.fromkeys(g for g, _ in svals)),
                  list(dict.fromkeys(s for _, s in svals)), svals, 100.0), encoding="utf-8")
    outputs.append(fig / "vqa_by_shots.svg")

    manifest = {
        "stage": "report",
        "version": __version__,
        "runs": [r.label for r in runs],
        "config": config.to_dict() if config is not None else None,
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
        "timestamps": {"finished": time.strftime("%Y-%m-%dT%H:%M:%S"), "wall_clock_s": round(time.time() - t0, 3)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
