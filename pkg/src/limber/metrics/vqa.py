"""VQA accuracy in its multi-annotator form."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tasks import normalize_answer


def vqa_accuracy(pred: str, answers: Sequence[str]) -> float:
    """``min(#matching annotators / 3, 1)``; a single gold answer means exact match."""
    p = normalize_answer(pred)
    gold = [normalize_answer(a) for a in answers]
    if len(gold) == 1:
        return float(p == gold[0])
    return min(sum(g == p for g in gold) / 3.0, 1.0)


def mean_vqa_accuracy(preds: Sequence[str], answers: Sequence[Sequence[str]]) -> float:
    if not preds:
        return 0.0
    return float(np.mean([vqa_accuracy(p, a) for p, a in zip(preds, answers)]))


def majority_answer_rate(answers: Sequence[Sequence[str]]) -> float:
    """Accuracy of always answering the single most common answer."""
    from collections import Counter

    counts = Counter(normalize_answer(a) for ans in answers for a in ans)
    if not counts:
        return 0.0
    best = min(counts, key=lambda a: (-counts[a], a))
    return mean_vqa_accuracy([best] * len(answers), answers)
