"""Word-level transfer analysis: per-word and per-role P/R/F1 and Wu-Palmer similarity."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..taxonomy import Taxonomy

ROLES = ("noun", "modifier", "relation")


def wup(taxonomy: Taxonomy, a: str, b: str) -> float:
    """Wu-Palmer similarity between two taxonomy nodes (root depth 1)."""
    return taxonomy.wup(a, b)


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    role: str
    node: str | None = None
    rank: int = 0


def load_lexicon(path) -> list[LexiconEntry]:
    """Read ``word<TAB>role<TAB>taxonomy_node`` lines (node may be empty)."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        word, role = parts[0].strip().lower(), parts[1].strip()
        node = parts[2].strip() if len(parts) > 2 and parts[2].strip() else None
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r} for {word!r}")
        out.append(LexiconEntry(word, role, node))
    return out


def build_lexicon(gold: Sequence[Sequence[str]], roles: dict[str, str], nodes: dict[str, str] | None = None,
                  top: int = 50) -> list[LexiconEntry]:
    """Top ``top`` words per role by number of gold examples containing them; ties alphabetical."""
    freq: Counter = Counter()
    for refs in gold:
        present = set()
        for r in refs:
            present.update(r.lower().split())
        freq.update(w for w in present if w in roles)
    nodes = nodes or {}
    out = []
    for role in ROLES:
        words = sorted((w for w in freq if roles[w] == role), key=lambda w: (-freq[w], w))[:top]
        out += [LexiconEntry(w, role, nodes.get(w), i + 1) for i, w in enumerate(words)]
    return out


@dataclass
class WordScore:
    word: str
    role: str
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class LexicalReport:
    words: list[WordScore]
    roles: dict[str, dict[str, float]]
    max_wup: list[float]

    @property
    def mean_max_wup(self) -> float:
        return float(np.mean(self.max_wup)) if self.max_wup else 0.0


def _present(texts: Sequence[str]) -> set[str]:
    from ..tasks import normalize_answer

    out: set[str] = set()
    for t in texts:
        out.update(normalize_answer(t).split())
    return out


def lexical_prf(generations: Sequence[str], gold: Sequence[Sequence[str]], lexicon: Sequence[LexiconEntry],
                taxonomy: Taxonomy | None = None) -> LexicalReport:
    """Per-word presence scores plus, per example, the best Wup between the
    gold noun and any generated noun (0 when none is generated)."""
    if len(generations) != len(gold):
        raise ValueError("one gold entry per generation is required")
    scores = {e.word: WordScore(e.word, e.role, 0, 0, 0) for e in lexicon}
    nouns = {e.word: e.node for e in lexicon if e.role == "noun" and e.node}
    max_wup = []
    for gen, refs in zip(generations, gold):
        refs = [refs] if isinstance(refs, str) else list(refs)
        g_words = _present([gen])
        r_words = _present(refs)
        for w, s in scores.items():
            in_g, in_r = w in g_words, w in r_words
            s.tp += in_g and in_r
            s.fp += in_g and not in_r
            s.fn += in_r and not in_g
        if taxonomy is not None and nouns:
            gold_nouns = [w for r in refs for w in r.lower().split() if w in nouns]
            gen_nouns = [w for w in gen.lower().split() if w in nouns]
            if gold_nouns:
                best = 0.0
                for gn in gen_nouns:
                    best = max(best, taxonomy.wup(nouns[gold_nouns[0]], nouns[gn]))
                max_wup.append(best)
    roles = {}
    for role in ROLES:
        ws = [s for s in scores.values() if s.role == role and s.tp + s.fn > 0]
        if ws:
            roles[role] = {
                "precision": float(np.mean([s.precision for s in ws])),
                "recall": float(np.mean([s.recall for s in ws])),
                "f1": float(np.mean([s.f1 for s in ws])),
            }
    return LexicalReport(list(scores.values()), roles, max_wup)


def random_pair_wup(taxonomy: Taxonomy, nodes: Sequence[str]) -> float:
    """Mean Wup over all unordered pairs of distinct nodes."""
    nodes = list(nodes)
    vals = [taxonomy.wup(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :]]
    return float(np.mean(vals)) if vals else 0.0
