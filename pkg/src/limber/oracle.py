"""An encoder whose features are a known invertible linear function of prompt
embeddings, so a perfect projection is guaranteed to exist.

Each example's feature vector is the concatenated LM input embeddings of its
gold caption's first ``k`` tokens (padded with PAD), multiplied by a fixed
random orthogonal matrix. A projection that learns the inverse rotation hands
the LM the caption itself as its prompt.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoders import Geometry
from .lm import PAD, DecoderLM, Vocabulary


class OracleEncoder:
    variant = "oracle"
    has_text_tower = False

    def __init__(self, lm: DecoderLM, vocab: Vocabulary, k: int, seed: int = 0):
        self.emb = lm.embedding_matrix().astype(np.float64)
        self.vocab = vocab
        self.k = int(k)
        d = self.emb.shape[1] * self.k
        q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(d, d)))
        # sign fix makes the draw unique for a given seed
        self.mixing = q * np.sign(np.diag(r))
        self.geometry = Geometry("pooled", 1, d)

    def token_block(self, captions: Sequence[str]) -> np.ndarray:
        ids = np.full((len(captions), self.k), PAD, dtype=np.int64)
        for i, c in enumerate(captions):
            toks = self.vocab.tokenize(c)[: self.k]
            ids[i, : len(toks)] = toks
        return ids

    def encode_captions(self, captions: Sequence[str]) -> np.ndarray:
        flat = self.emb[self.token_block(captions)].reshape(len(captions), -1)
        return (flat @ self.mixing).astype(np.float32)
