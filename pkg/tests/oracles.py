"""Independent reference implementations used only by the tests.

They are written for obviousness rather than speed: dense vectors over an
explicit n-gram vocabulary, list counting, ancestor sets, explicit ranking.
None of them import the package's own metric code.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- captions

def _grams(words, n):
    return [" ".join(words[i : i + n]) for i in range(len(words) - n + 1)]


def cider_d_brute(cands, refs, sigma=6.0, scale=10.0, max_n=4):
    N = len(refs)
    total = 0.0
    for cand, rs in zip(cands, refs):
        cw = cand.lower().split()
        per_ref = []
        for r in rs:
            rw = r.lower().split()
            acc = 0.0
            for n in range(1, max_n + 1):
                vocab = sorted(set(_grams(cw, n)) | set(_grams(rw, n)))
                if not vocab:
                    continue

                def df(g):
                    c = 0
                    for image_refs in refs:
                        if any(g in _grams(x.lower().split(), n) for x in image_refs):
                            c += 1
                    return max(c, 1)

                idf = np.array([math.log(N / df(g)) for g in vocab])
                vc = np.array([_grams(cw, n).count(g) for g in vocab], dtype=float) * idf
                vr = np.array([_grams(rw, n).count(g) for g in vocab], dtype=float) * idf
                nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
                if nc == 0 or nr == 0:
                    continue
                clipped = np.minimum(vc, vr)
                acc += float(clipped @ vr) / (nc * nr) * math.exp(-((len(cw) - len(rw)) ** 2) / (2 * sigma**2))
            per_ref.append(acc / max_n)
        total += scale * sum(per_ref) / len(per_ref)
    return total / len(cands)


def bleu_brute(cands, refs, n=4, eps=1e-9):
    num = [0] * n
    den = [0] * n
    c_len = 0
    r_len = 0
    for cand, rs in zip(cands, refs):
        cw = cand.lower().split()
        rws = [r.lower().split() for r in rs]
        c_len += len(cw)
        best = None
        for rw in rws:
            key = (abs(len(rw) - len(cw)), len(rw))
            if best is None or key < best:
                best = key
        r_len += best[1]
        for k in range(1, n + 1):
            cg = _grams(cw, k)
            for g in set(cg):
                max_ref = max(_grams(rw, k).count(g) for rw in rws)
                num[k - 1] += min(cg.count(g), max_ref)
            den[k - 1] += len(cg)
    if c_len == 0:
        return 0.0
    logs = [math.log((num[k] + eps) / (den[k] + eps)) for k in range(n)]
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(sum(logs) / n)


# ---------------------------------------------------------------- taxonomy

def ancestors(parent, node):
    chain = [node]
    while parent[chain[-1]] is not None:
        chain.append(parent[chain[-1]])
    return chain


def wup_brute(parent, a, b):
    aa, bb = ancestors(parent, a), ancestors(parent, b)
    common = [x for x in aa if x in set(bb)]
    lca = max(common, key=lambda x: len(ancestors(parent, x)))
    return 2 * len(ancestors(parent, lca)) / (len(aa) + len(bb))


# ---------------------------------------------------------------- VQA / AP

def vqa_brute(pred, answers):
    import re
    import string

    def norm(s):
        s = re.sub(f"[{re.escape(string.punctuation)}]", " ", s.lower())
        return " ".join(w for w in s.split() if w not in ("a", "an", "the"))

    p = norm(pred)
    gold = [norm(a) for a in answers]
    if len(gold) == 1:
        return 1.0 if p == gold[0] else 0.0
    matches = 0
    for g in gold:
        if g == p:
            matches += 1
    return min(1.0, matches / 3)


def property_ap_brute(predicted, gold, matrix):
    matrix = [list(map(float, row)) for row in matrix]
    target = [v > 0 for v in matrix[gold]]
    if not any(target):
        return 0.0
    B = len(target)
    if predicted:
        scores = [sum(matrix[p][j] for p in predicted) / len(predicted) for j in range(B)]
    else:
        scores = [0.0] * B
    ranked = sorted(range(B), key=lambda j: (-scores[j], j))
    rank_of = {j: r + 1 for r, j in enumerate(ranked)}
    precisions = []
    for j in range(B):
        if target[j]:
            r = rank_of[j]
            hits = sum(1 for i in ranked[:r] if target[i])
            precisions.append(hits / r)
    return sum(precisions) / len(precisions)


# ---------------------------------------------------------------- gradients

def numeric_grad(f, x: np.ndarray, idx, eps: float) -> np.ndarray:
    """Central differences of scalar ``f`` at the flat coordinates ``idx`` of ``x`` (modified in place)."""
    flat = x.reshape(-1)
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * eps)
    return out


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Relative error; ``floor`` bounds the denominator so gradients that are
    exactly zero in theory (e.g. the attention key bias) compare absolutely."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
