"""Corpus-level caption metrics: CIDEr-D, BLEU and a contrastive-tower score."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_N = 4


def ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def _tokens(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class NgramIndex:
    """Document frequencies of n-grams over a reference corpus.

    An n-gram counts once per image no matter how many of that image's
    references contain it.
    """

    corpus_size: int
    df: list[Counter] = field(default_factory=list)

    @classmethod
    def build(cls, references: Sequence[Sequence[str]], max_n: int = MAX_N) -> "NgramIndex":
        df = [Counter() for _ in range(max_n)]
        for refs in references:
            for n in range(1, max_n + 1):
                seen = set()
                for r in refs:
                    seen.update(ngrams(_tokens(r), n))
                df[n - 1].update(seen)
        return cls(len(references), df)

    def idf(self, gram: tuple, n: int) -> float:
        # unseen n-grams are treated as if they occurred once
        return math.log(self.corpus_size) - math.log(max(1.0, self.df[n - 1].get(gram, 0)))


def _tfidf(words: list[str], index: NgramIndex, max_n: int) -> tuple[list[dict], list[float]]:
    vecs, norms = [], []
    for n in range(1, max_n + 1):
        vec = {g: c * index.idf(g, n) for g, c in ngrams(words, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d_per_example(candidates: Sequence[str], references: Sequence[Sequence[str]], sigma: float = 6.0,
                        scale: float = 10.0, max_n: int = MAX_N, index: NgramIndex | None = None) -> list[float]:
    if len(candidates) != len(references):
        raise ValueError("one reference list per candidate is required")
    if not references or any(len(r) == 0 for r in references):
        raise ValueError("CIDEr-D needs at least one reference per candidate")
    index = index or NgramIndex.build(references, max_n)
    scores = []
    for cand, refs in zip(candidates, references):
        cw = _tokens(cand)
        cvec, cnorm = _tfidf(cw, index, max_n)
        total = 0.0
        for ref in refs:
            rw = _tokens(ref)
            rvec, rnorm = _tfidf(rw, index, max_n)
            delta = len(cw) - len(rw)
            penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            per_n = 0.0
            for n in range(max_n):
                if cnorm[n] == 0 or rnorm[n] == 0:
                    continue
                dot = sum(min(v, rvec[n][g]) * rvec[n][g] for g, v in cvec[n].items() if g in rvec[n])
                per_n += dot / (cnorm[n] * rnorm[n]) * penalty
            total += per_n / max_n
        scores.append(scale * total / len(refs))
    return scores


def cider_d(candidates: Sequence[str], references: Sequence[Sequence[str]], sigma: float = 6.0,
            scale: float = 10.0, max_n: int = MAX_N) -> float:
    """CIDEr-D averaged over the corpus. Document frequencies come from ``references``."""
    scores = cider_d_per_example(candidates, references, sigma, scale, max_n)
    return float(np.mean(scores)) if scores else 0.0


def bleu(candidates: Sequence[str], references: Sequence[Sequence[str]], n: int = 4, eps: float = 1e-9) -> float:
    """Corpus BLEU-n with clipped precisions, closest-length brevity penalty and
    additive ``eps`` smoothing of each precision."""
    if len(candidates) != len(references):
        raise ValueError("one reference list per candidate is required")
    correct = [0] * n
    guess = [0] * n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        cw = _tokens(cand)
        rws = [_tokens(r) for r in refs]
        cand_len += len(cw)
        if rws:
            ref_len += min((abs(len(r) - len(cw)), len(r)) for r in rws)[1]
        for k in range(1, n + 1):
            cg = ngrams(cw, k)
            max_ref: Counter = Counter()
            for r in rws:
                for g, c in ngrams(r, k).items():
                    max_ref[g] = max(max_ref[g], c)
            correct[k - 1] += sum(min(c, max_ref[g]) for g, c in cg.items())
            guess[k - 1] += max(len(cw) - k + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = sum(math.log((correct[k] + eps) / (guess[k] + eps)) for k in range(n)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return float(bp * math.exp(log_p))


def contrastive_score(image_emb: np.ndarray, text_emb: np.ndarray, w: float = 2.5) -> np.ndarray:
    """``w * max(cos, 0)`` between paired rows of image and caption embeddings."""
    a = np.asarray(image_emb, dtype=np.float64)
    b = np.asarray(text_emb, dtype=np.float64)
    cos = (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1) + 1e-12)
    return w * np.maximum(cos, 0.0)


def ref_contrastive_score(image_emb: np.ndarray, text_emb: np.ndarray, ref_embs: Sequence[np.ndarray],
                          w: float = 2.5) -> np.ndarray:
    """Harmonic mean of the image score and the best (clamped) reference-caption cosine."""
    s = contrastive_score(image_emb, text_emb, w)
    t = np.asarray(text_emb, dtype=np.float64)
    out = np.zeros(len(s))
    for i, refs in enumerate(ref_embs):
        r = np.asarray(refs, dtype=np.float64)
        cos = r @ t[i] / (np.linalg.norm(r, axis=-1) * np.linalg.norm(t[i]) + 1e-12)
        a, b = s[i], max(float(cos.max()), 0.0)
        out[i] = 0.0 if a + b == 0 else 2 * a * b / (a + b)
    return out


def score_with_towers(encoder, observations: np.ndarray, captions: Sequence[str], w: float = 2.5) -> np.ndarray:
    """Contrastive score using an encoder's own image and text towers."""
    from ..encoders import CapabilityError

    if encoder is None or not getattr(encoder, "has_text_tower", False):
        raise CapabilityError("contrastive score needs an encoder with a text tower")
    return contrastive_score(encoder.embed_images(observations), encoder.embed_texts(captions), w)
