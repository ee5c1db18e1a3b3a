"""A miniature GPT-style decoder that accepts soft prompts.

The model is pretrained on text only and then frozen.  Downstream code feeds
it sequences whose first positions are continuous vectors rather than token
embeddings; everything after the embedding lookup is shared between the two
paths, which is what makes prompt rows copied from the embedding table
indistinguishable from the tokens themselves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import container
from .nn import Module, linear
from .optim import AdamW, clip_global_norm
from .tensor import (
    Tape,
    Tensor,
    concat,
    cross_entropy,
    default_dtype,
    dropout,
    gelu,
    layernorm,
    matmul,
    reshape,
    softmax,
    swapaxes,
    take_rows,
)

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class LengthError(ValueError):
    """Sequence does not fit in the model's context window."""


class TrainingError(RuntimeError):
    """Optimisation diverged."""


class Vocabulary:
    """Word-level, lowercase vocabulary with fixed reserved ids 0..3."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        word = word.lower()
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word.lower(), UNK)

    def tokenize(self, text: str) -> list[int]:
        return [self.stoi.get(w, UNK) for w in text.lower().split()]

    def detokenize(self, ids: Iterable[int], skip_special: bool = True) -> str:
        words = []
        for i in ids:
            i = int(i)
            if skip_special and i in (PAD, BOS, EOS):
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def save(self, path) -> None:
        lines = [f"{w}\t{i}" for i, w in enumerate(self.itos)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            word, idx = line.rsplit("\t", 1)
            rows.append((int(idx), word))
        rows.sort()
        for idx, word in rows:
            if idx < len(RESERVED):
                if RESERVED[idx] != word:
                    raise ValueError(f"reserved id {idx} must be {RESERVED[idx]!r}, got {word!r}")
                continue
            if vocab.add(word) != idx:
                raise ValueError(f"vocabulary file ids are not contiguous near {word!r}")
        return vocab


@dataclass
class LmConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    context_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")


class DecoderLM(Module):
    """Pre-norm causal transformer with learned positions and an untied head."""

    def __init__(self, config: LmConfig, seed: int = 0):
        super().__init__()
        self.config = config
        c = config
        rng = np.random.default_rng(seed)
        std = 0.02
        self.add_param("tok_emb", rng.normal(0, std, (c.vocab_size, c.d_model)))
        self.add_param("pos_emb", rng.normal(0, std, (c.context_len, c.d_model)))
        proj_std = std / math.sqrt(2 * c.n_layers)
        for i in range(c.n_layers):
            p = f"h{i}."
            self.add_param(p + "ln1.g", np.ones(c.d_model))
            self.add_param(p + "ln1.b", np.zeros(c.d_model))
            for name in ("q", "k", "v"):
                self.add_param(p + f"attn.w{name}", rng.normal(0, std, (c.d_model, c.d_model)))
                self.add_param(p + f"attn.b{name}", np.zeros(c.d_model))
            self.add_param(p + "attn.wo", rng.normal(0, proj_std, (c.d_model, c.d_model)))
            self.add_param(p + "attn.bo", np.zeros(c.d_model))
            self.add_param(p + "ln2.g", np.ones(c.d_model))
            self.add_param(p + "ln2.b", np.zeros(c.d_model))
            self.add_param(p + "mlp.w1", rng.normal(0, std, (c.d_model, c.d_ff)))
            self.add_param(p + "mlp.b1", np.zeros(c.d_ff))
            self.add_param(p + "mlp.w2", rng.normal(0, proj_std, (c.d_ff, c.d_model)))
            self.add_param(p + "mlp.b2", np.zeros(c.d_model))
        self.add_param("ln_f.g", np.ones(c.d_model))
        self.add_param("ln_f.b", np.zeros(c.d_model))
        self.add_param("head.w", rng.normal(0, std, (c.d_model, c.vocab_size)))
        self.add_param("head.b", np.zeros(c.vocab_size))
        self._mask_cache: dict[int, np.ndarray] = {}

    @property
    def d_model(self) -> int:
        return self.config.d_model

    def embedding_matrix(self) -> np.ndarray:
        return self.params["tok_emb"].data

    def embed_tokens(self, ids) -> Tensor:
        return take_rows(self.params["tok_emb"], np.asarray(ids, dtype=np.int64))

    def _causal_mask(self, T: int) -> np.ndarray:
        m = self._mask_cache.get(T)
        if m is None or m.dtype != default_dtype():
            m = np.triu(np.full((T, T), -1e9, dtype=default_dtype()), k=1)
            self._mask_cache[T] = m
        return m

    def forward_embeds(self, x: Tensor, training: bool = False, dropout_key: Sequence[int] | None = None) -> Tensor:
        """Run the transformer on a ``[B, T, d]`` input sequence; returns ``[B, T, V]`` logits."""
        c = self.config
        P = self.params
        B, T, d = x.shape
        if T > c.context_len:
            raise LengthError(f"sequence of length {T} exceeds context {c.context_len}")
        p_drop = c.dropout if training else 0.0
        site = [0]

        def drop(h):
            if p_drop == 0.0:
                return h
            site[0] += 1
            return dropout(h, p_drop, key=tuple(dropout_key) + (site[0],), training=True)

        h = x + P["pos_emb"][:T]
        h = drop(h)
        H = c.n_heads
        dh = d // H
        scale = 1.0 / math.sqrt(dh)
        mask = self._causal_mask(T)
        for i in range(c.n_layers):
            p = f"h{i}."
            a = layernorm(h, P[p + "ln1.g"], P[p + "ln1.b"])
            q = linear(a, P[p + "attn.wq"], P[p + "attn.bq"])
            k = linear(a, P[p + "attn.wk"], P[p + "attn.bk"])
            v = linear(a, P[p + "attn.wv"], P[p + "attn.bv"])
            q = swapaxes(reshape(q, (B, T, H, dh)), 1, 2)
            k = swapaxes(reshape(k, (B, T, H, dh)), 1, 2)
            v = swapaxes(reshape(v, (B, T, H, dh)), 1, 2)
            scores = matmul(q, swapaxes(k, 2, 3)) * scale + mask
            att = softmax(scores)
            o = reshape(swapaxes(matmul(att, v), 1, 2), (B, T, d))
            h = h + drop(linear(o, P[p + "attn.wo"], P[p + "attn.bo"]))
            m = layernorm(h, P[p + "ln2.g"], P[p + "ln2.b"])
            m = linear(gelu(linear(m, P[p + "mlp.w1"], P[p + "mlp.b1"])), P[p + "mlp.w2"], P[p + "mlp.b2"])
            h = h + drop(m)
        h = layernorm(h, P["ln_f.g"], P["ln_f.b"])
        return linear(h, P["head.w"], P["head.b"])

    def forward(self, ids, training: bool = False, dropout_key=None) -> Tensor:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        return self.forward_embeds(self.embed_tokens(ids), training, dropout_key)

    def forward_mixed(self, prompts, ids, training: bool = False, dropout_key=None) -> Tensor:
        """Logits for ``[prompts ; embed(ids)]``.

        ``prompts`` is ``[B, k, d]`` (Tensor or array; ``k`` may be 0 or ``None``)
        and occupies positions ``0..k-1``; tokens follow.
        """
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        tok = self.embed_tokens(ids) if ids.shape[1] else None
        if prompts is None or (hasattr(prompts, "shape") and prompts.shape[1] == 0):
            if tok is None:
                raise ValueError("empty input")
            x = tok
        else:
            pr = prompts if isinstance(prompts, Tensor) else Tensor(prompts)
            if pr.ndim == 2:
                pr = reshape(pr, (1,) + pr.shape)
            if pr.shape[-1] != self.d_model:
                raise ValueError(f"prompt width {pr.shape[-1]} != d_model {self.d_model}")
            x = pr if tok is None else concat([pr, tok], axis=1)
        if x.shape[1] > self.config.context_len:
            raise LengthError(f"{x.shape[1]} positions exceed context {self.config.context_len}")
        return self.forward_embeds(x, training, dropout_key)

    def save(self, path) -> None:
        container.save(path, self.state_dict())
        Path(str(path) + ".json").write_text(_json_dumps({"config": asdict(self.config)}))

    @classmethod
    def load(cls, path) -> "DecoderLM":
        import json

        meta = json.loads(Path(str(path) + ".json").read_text())
        lm = cls(LmConfig(**meta["config"]))
        lm.load_state_dict(container.load(path))
        return lm.freeze()


def _json_dumps(obj) -> str:
    import json

    return json.dumps(obj, indent=2, sort_keys=True)


# ----------------------------------------------------------------------------
# segments: mixed sequences of soft prompts and tokens


def assemble(lm: DecoderLM, segments: Sequence) -> np.ndarray:
    """Build a ``[T, d]`` input from segments of token ids (ints) or prompt matrices."""
    emb = lm.embedding_matrix()
    parts = []
    for seg in segments:
        arr = np.asarray(seg)
        if arr.ndim == 2:
            parts.append(arr.astype(emb.dtype, copy=False))
        elif arr.size:
            parts.append(emb[arr.astype(np.int64)])
    if not parts:
        return np.zeros((0, lm.d_model), dtype=emb.dtype)
    return np.concatenate(parts, axis=0)


# ----------------------------------------------------------------------------
# generation


@dataclass
class DecodeSettings:
    mode: str = "greedy"
    top_k: int = 5
    temperature: float = 1.0
    max_len: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("greedy", "top-k"):
            raise ValueError(f"unknown decode mode {self.mode!r}")


def generate_from_embeds(
    lm: DecoderLM,
    context: np.ndarray,
    settings: DecodeSettings | None = None,
    stop: Sequence[int] = (EOS,),
) -> list[list[int]]:
    """Decode continuations for a batch of equal-length ``[B, T, d]`` contexts.

    Each step re-runs the full forward pass over the growing sequence.
    """
    s = settings or DecodeSettings()
    ctx = np.asarray(context, dtype=lm.embedding_matrix().dtype)
    if ctx.ndim == 2:
        ctx = ctx[None]
    B, T, _ = ctx.shape
    if T + max(s.max_len - 1, 0) > lm.config.context_len:
        raise LengthError(f"context {T} + max_len {s.max_len} exceeds {lm.config.context_len}")
    out: list[list[int]] = [[] for _ in range(B)]
    if s.max_len <= 0 or B == 0:
        return out
    rng = np.random.default_rng(s.seed)
    emb = lm.embedding_matrix()
    done = np.zeros(B, dtype=bool)
    stop = set(int(t) for t in stop)
    x = ctx
    for _ in range(s.max_len):
        logits = lm.forward_embeds(Tensor(x)).data[:, -1, :].astype(np.float64)
        logits[:, PAD] = -np.inf
        logits[:, BOS] = -np.inf
        if s.mode == "greedy":
            nxt = logits.argmax(axis=-1)
        else:
            nxt = _sample_top_k(logits, s.top_k, s.temperature, rng)
        for b in range(B):
            if done[b]:
                continue
            tok = int(nxt[b])
            if tok in stop:
                done[b] = True
            else:
                out[b].append(tok)
        if done.all() or x.shape[1] + 1 > lm.config.context_len:
            break
        x = np.concatenate([x, emb[nxt][:, None, :]], axis=1)
    return out


def _sample_top_k(logits: np.ndarray, k: int, temperature: float, rng: np.random.Generator) -> np.ndarray:
    k = max(1, min(k, logits.shape[-1]))
    out = np.empty(logits.shape[0], dtype=np.int64)
    for b, row in enumerate(logits):
        top = np.argsort(-row, kind="stable")[:k]
        z = row[top] / max(temperature, 1e-6)
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        out[b] = top[rng.choice(k, p=p)]
    return out


def generate(
    lm: DecoderLM,
    prompts,
    prefix_ids,
    settings: DecodeSettings | None = None,
) -> list[list[int]]:
    """Decode after ``[prompts ; prefix]``; ``prompts`` is ``[B, k, d]`` or ``None``."""
    prefix = np.atleast_2d(np.asarray(prefix_ids, dtype=np.int64))
    emb = lm.embedding_matrix()
    tok = emb[prefix]
    if prompts is not None:
        pr = np.asarray(prompts.data if isinstance(prompts, Tensor) else prompts, dtype=emb.dtype)
        if pr.ndim == 2:
            pr = pr[None]
        if tok.shape[0] == 1 and pr.shape[0] > 1:
            tok = np.repeat(tok, pr.shape[0], axis=0)
        ctx = np.concatenate([pr, tok], axis=1)
    else:
        ctx = tok
    return generate_from_embeds(lm, ctx, settings)


# ----------------------------------------------------------------------------
# pretraining and evaluation


@dataclass
class PretrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 3e-3
    warmup: int = 100
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.95)
    clip: float = 1.0
    seed: int = 0
    log_every: int = 250
    # draw each batch from documents of similar length (less padding)
    bucket: bool = True
    history: list = field(default_factory=list)


def encode_docs(vocab: Vocabulary, docs: Sequence[str]) -> list[np.ndarray]:
    return [np.array([BOS] + vocab.tokenize(d) + [EOS], dtype=np.int64) for d in docs]


def pad_batch(seqs: Sequence[np.ndarray], pad: int = PAD) -> np.ndarray:
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Counter-based minibatch sampler: the batch for ``step`` depends only on ``(seed, step)``."""
    rng = np.random.default_rng([seed, step, 0x5A3])
    return rng.integers(0, n, size=batch_size)


def length_buckets(lengths: Sequence[int], batch_size: int, seed: int) -> list[np.ndarray]:
    """Chunks of ``batch_size`` indices with similar lengths (ties broken by a seeded shuffle)."""
    tie = np.random.default_rng([seed, 0xB0C]).random(len(lengths))
    order = np.lexsort((tie, np.asarray(lengths)))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def pretrain_lm(
    docs: Sequence[np.ndarray],
    config: LmConfig,
    train: PretrainConfig | None = None,
    lm: DecoderLM | None = None,
) -> DecoderLM:
    """Next-token pretraining on encoded documents; returns the model frozen."""
    tc = train or PretrainConfig()
    if not docs:
        raise ValueError("empty pretraining corpus")
    too_long = [len(d) for d in docs if len(d) > config.context_len + 1]
    if too_long:
        raise LengthError(f"{len(too_long)} documents exceed the context window")
    lm = lm or DecoderLM(config, seed=tc.seed)
    lm.unfreeze()
    params = lm.parameters()
    decay = [p for p in params if p.data.ndim == 2 and p.name not in ("pos_emb",)]
    no_decay = [p for p in params if not (p.data.ndim == 2 and p.name not in ("pos_emb",))]
    from .optim import ParamGroup

    opt = AdamW(
        groups=[ParamGroup(decay, tc.lr, tc.weight_decay), ParamGroup(no_decay, tc.lr, 0.0)],
        betas=tuple(tc.betas),
    )
    buckets = length_buckets([len(d) for d in docs], tc.batch_size, tc.seed) if tc.bucket else None
    for step in range(tc.steps):
        lr = _lr_at(step, tc)
        for g in opt.groups:
            g.lr = lr
        if buckets is not None:
            idx = buckets[int(batch_indices(len(buckets), 1, tc.seed, step)[0])]
        else:
            idx = batch_indices(len(docs), tc.batch_size, tc.seed, step)
        batch = pad_batch([docs[i] for i in idx])
        inp, tgt = batch[:, :-1], batch[:, 1:]
        with Tape() as tape:
            logits = lm.forward(inp, training=True, dropout_key=(tc.seed, step))
            loss = cross_entropy(logits, tgt, tgt != PAD)
        if not np.isfinite(loss.data):
            raise TrainingError(f"pretraining diverged at step {step}")
        tape.backward(loss)
        clip_global_norm(params, tc.clip)
        opt.step()
        if step % tc.log_every == 0 or step == tc.steps - 1:
            tc.history.append((step, float(loss.data)))
            log.info("lm step %d loss %.4f", step, float(loss.data))
    return lm.freeze()


def _lr_at(step: int, tc: PretrainConfig) -> float:
    if step < tc.warmup:
        return tc.lr * (step + 1) / tc.warmup
    frac = (step - tc.warmup) / max(1, tc.steps - tc.warmup)
    return tc.lr * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))


def token_nll(lm: DecoderLM, docs: Sequence[np.ndarray], batch_size: int = 64) -> tuple[float, int]:
    """Summed next-token NLL and token count over encoded documents (PAD masked)."""
    total, count = 0.0, 0
    order = sorted(range(len(docs)), key=lambda i: len(docs[i]))
    for start in range(0, len(order), batch_size):
        batch = pad_batch([docs[i] for i in order[start : start + batch_size]])
        inp, tgt = batch[:, :-1], batch[:, 1:]
        logits = lm.forward(inp).data.astype(np.float64)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
        m = tgt != PAD
        total -= float((picked * m).sum())
        count += int(m.sum())
    return total, count


def perplexity(lm: DecoderLM, docs: Sequence[np.ndarray], batch_size: int = 64) -> float:
    if len(docs) == 0:
        raise ValueError("perplexity of an empty corpus is undefined")
    total, count = token_nll(lm, docs, batch_size)
    return float(math.exp(total / count))
