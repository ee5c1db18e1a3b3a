"""Animal-mention accuracy, taxonomic mistakes and property analyses."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..taxonomy import Taxonomy


def property_overlap(a: Sequence[int], b: Sequence[int]) -> float:
    """Jaccard index of two binary property vectors; 0 when both are empty."""
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    union = int(np.sum(a | b))
    return int(np.sum(a & b)) / union if union else 0.0


def property_ap(predicted: Sequence[int], gold: int, matrix: np.ndarray) -> float:
    """Average precision of the mean property vector of ``predicted`` categories
    against the gold category's binary vector.

    Properties are ranked by mean score (descending), ties by property index;
    precision is averaged at the rank of every gold-positive property.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    target = matrix[gold] > 0
    if not target.any():
        return 0.0
    if len(predicted) == 0:
        scores = np.zeros(matrix.shape[1])
    else:
        scores = matrix[np.asarray(predicted, dtype=np.int64)].mean(axis=0)
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = 0
    total = 0.0
    for rank, j in enumerate(order, start=1):
        if target[j]:
            hits += 1
            total += hits / rank
    return total / int(target.sum())


@dataclass
class AnimalReport:
    accuracy: float
    mistake_wup: float
    mistake_jaccard: float
    top_confusion_jaccard: float
    n_mistakes: int
    confusions: Counter = field(default_factory=Counter)
    mean_property_ap: float = 0.0

    def confusion_rows(self) -> list[tuple[str, str, int]]:
        return [(g, p, c) for (g, p), c in sorted(self.confusions.items(), key=lambda kv: (-kv[1], kv[0]))]


def mentioned(text: str, nouns: dict[str, int], synonyms: dict[str, str] | None = None) -> list[int]:
    """Category ids mentioned in ``text`` in order of appearance."""
    out = []
    for w in text.lower().split():
        w = synonyms.get(w, w) if synonyms else w
        if w in nouns and nouns[w] not in out:
            out.append(nouns[w])
    return out


def animal_report(generations: Sequence[str], gold: Sequence[int], nouns: Sequence[str], taxonomy: Taxonomy,
                  nodes: Sequence[str], matrix: np.ndarray, synonyms: dict[str, str] | None = None,
                  top_k: int = 10) -> AnimalReport:
    """Mention accuracy over captions of known categories.

    A caption is correct when it names the gold category. When it names
    some other category instead, the first such name is the confusion; its
    Wup and property Jaccard with the gold category are averaged over all
    mistakes. ``mean_property_ap`` scores, per gold category, the properties of
    the animals its captions named. ``top_confusion_jaccard`` averages Jaccard over the ``top_k``
    most frequent confusion pairs.
    """
    index = {n: i for i, n in enumerate(nouns)}
    correct = 0
    wups, jacc = [], []
    confusions: Counter = Counter()
    by_gold: dict[int, list[int]] = {}
    for text, g in zip(generations, gold):
        ids = mentioned(text, index, synonyms)
        by_gold.setdefault(int(g), []).extend(ids[:1])
        if int(g) in ids:
            correct += 1
            continue
        if ids:
            p = ids[0]
            confusions[(nouns[int(g)], nouns[p])] += 1
            wups.append(taxonomy.wup(nodes[int(g)], nodes[p]))
            jacc.append(property_overlap(matrix[int(g)], matrix[p]))
    top = sorted(confusions.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    top_j = [property_overlap(matrix[index[g]], matrix[index[p]]) for (g, p), _ in top]
    # AP only where at least one caption of that category named some animal
    aps = [property_ap(preds, g, matrix) for g, preds in sorted(by_gold.items()) if preds]
    n = len(generations)
    return AnimalReport(
        accuracy=correct / n if n else 0.0,
        mistake_wup=float(np.mean(wups)) if wups else 0.0,
        mistake_jaccard=float(np.mean(jacc)) if jacc else 0.0,
        top_confusion_jaccard=float(np.mean(top_j)) if top_j else 0.0,
        n_mistakes=len(wups),
        confusions=confusions,
        mean_property_ap=float(np.mean(aps)) if aps else 0.0,
    )
