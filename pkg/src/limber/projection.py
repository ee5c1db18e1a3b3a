"""The linear map from frozen image features to LM soft prompts, and its trainer.

Everything except the projection is frozen. Training sequences are
``<bos> [k image prompts] caption <eos>`` and the loss is next-token
cross-entropy over the caption tokens and the closing EOS only.

On an optional ``paired`` fraction of steps another image-caption pair is
placed first and scored too, so prompts also see training at later
positions, which is where they sit in a few-shot transcript.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container
from .encoders import EncoderModel
from .lm import BOS, EOS, PAD, DecoderLM, TrainingError, Vocabulary, batch_indices, pad_batch
from .nn import Module, fan_in_normal
from .optim import AdamW, ParamGroup, clip_global_norm
from .tensor import Tape, Tensor, concat, cross_entropy, getitem, matmul, reshape

log = logging.getLogger(__name__)

MODES = ("vector", "patch")


class ShapeError(ValueError):
    pass


class Projection(Module):
    """Affine map producing ``k`` prompt vectors of width ``e_L`` per example.

    ``vector`` mode flattens the features and applies one ``[in x k*e_L]`` map;
    ``patch`` mode applies a shared ``[h_patch x e_L]`` map to each of ``k``
    feature tokens.
    """

    def __init__(self, mode: str, in_dim: int, k: int, e_L: int, n_tokens: int = 1, seed: int = 0,
                 init: str = "normal"):
        super().__init__()
        if mode not in MODES:
            raise ShapeError(f"unknown projection mode {mode!r}")
        if mode == "patch" and n_tokens != k:
            raise ShapeError("patch mode emits one prompt per feature token")
        self.mode, self.in_dim, self.k, self.e_L, self.n_tokens, self.seed = mode, in_dim, k, e_L, n_tokens, seed
        rng = np.random.default_rng([seed, 0x9A0])
        fan_in = in_dim * n_tokens if mode == "vector" else in_dim
        out = k * e_L if mode == "vector" else e_L
        w = fan_in_normal(rng, fan_in, out) if init == "normal" else np.zeros((fan_in, out))
        self.add_param("proj.w", w)
        self.add_param("proj.b", np.zeros(out))

    def _check(self, shape: tuple) -> None:
        if self.n_tokens == 1 and len(shape) == 2:
            ok = shape[1] == self.in_dim
        else:
            ok = len(shape) == 3 and shape[1] == self.n_tokens and shape[2] == self.in_dim
        if not ok:
            raise ShapeError(f"features of shape {shape} do not fit a {self.mode} projection "
                             f"({self.n_tokens} x {self.in_dim})")

    def forward(self, feats: Tensor) -> Tensor:
        """``[N, h]`` or ``[N, n, h]`` features to ``[N, k, e_L]`` prompts."""
        self._check(feats.shape)
        N = feats.shape[0]
        w, b = self.params["proj.w"], self.params["proj.b"]
        if self.mode == "vector":
            flat = reshape(feats, (N, self.n_tokens * self.in_dim))
            return reshape(matmul(flat, w) + b, (N, self.k, self.e_L))
        if feats.ndim == 2:
            feats = reshape(feats, (N, 1, self.in_dim))
        return matmul(feats, w) + b

    def project(self, feats: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(np.asarray(feats, dtype=self.params["proj.w"].data.dtype))).data

    def header(self) -> dict:
        return {"mode": self.mode, "in_dim": self.in_dim, "k": self.k, "e_L": self.e_L,
                "n_tokens": self.n_tokens, "seed": self.seed}


def projection_for(encoder_geometry, e_L: int, k: int | None = None, mode: str | None = None,
                   seed: int = 0) -> Projection:
    """Default projection for an encoder: per-patch for grids, vector for pooled outputs."""
    g = encoder_geometry
    if mode is None:
        mode = "patch" if g.kind == "grid" else "vector"
    if mode == "patch":
        return Projection("patch", g.width, g.n_tokens, e_L, g.n_tokens, seed)
    return Projection("vector", g.width, k or 2, e_L, g.n_tokens, seed)


@dataclass
class LimberTrainConfig:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 8e-4
    lr_encoder: float | None = None
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.0
    dropout: float = 0.1
    clip: float = 1.0
    paired: float = 0.0
    seed: int = 0
    log_every: int = 250

    # reference scale, selectable for bookkeeping
    @classmethod
    def paper_scale(cls, **kw) -> "LimberTrainConfig":
        return cls(steps=15000, batch_size=2048, **kw)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("projection learning rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch size must be positive and steps non-negative")
        if not 0.0 <= self.paired <= 1.0:
            raise ValueError("paired must be a fraction in [0, 1]")
        self.betas = tuple(self.betas)


TUNED_ENCODER_LR = 2e-6


@dataclass
class TrainState:
    step: int = 0
    history: list = field(default_factory=list)


class LimberTrainer:
    """Owns the projection (and, in tuned mode, the encoder) during training.

    ``features`` is either a precomputed frozen feature array or, when the
    encoder is being tuned, the raw observations.
    """

    def __init__(self, lm: DecoderLM, projection: Projection, config: LimberTrainConfig,
                 encoder: EncoderModel | None = None, tune_encoder: bool = False):
        self.lm, self.proj, self.cfg = lm, projection, config
        self.encoder = encoder
        self.tune = tune_encoder
        if tune_encoder:
            if encoder is None:
                raise ValueError("tuned-encoder mode needs the encoder")
            if config.lr_encoder is None:
                raise ValueError("tuned-encoder mode requires lr_encoder")
            encoder.freeze()
            encoder.frozen = False
            for t in encoder.feature_parameters():
                t.requires_grad = True
        lm.freeze()
        if encoder is not None and not tune_encoder:
            encoder.freeze()
        self.lm_hash = lm.content_hash()
        self.encoder_hash = encoder.content_hash() if encoder is not None else None
        groups = [ParamGroup(projection.trainable(), config.lr, config.weight_decay)]
        if tune_encoder:
            groups.append(ParamGroup(encoder.feature_parameters(), config.lr_encoder, config.weight_decay))
        self.opt = AdamW(groups=groups, betas=config.betas)
        self.state = TrainState()

    def trainable_parameters(self) -> list[Tensor]:
        return self.opt.parameters()

    def trainable_names(self) -> list[str]:
        """Qualified names of every tensor the optimizer updates."""
        owned = {id(t) for t in self.trainable_parameters()}
        names = [f"projection.{k}" for k, t in self.proj.params.items() if id(t) in owned]
        if self.encoder is not None:
            names += [f"encoder.{k}" for k, t in self.encoder.params.items() if id(t) in owned]
        lm_names = [f"lm.{k}" for k, t in self.lm.params.items() if id(t) in owned]
        return names + lm_names

    def loss(self, inputs: np.ndarray, captions: Sequence[np.ndarray], step: int, training: bool = True,
             pair: tuple[np.ndarray, Sequence[np.ndarray]] | None = None) -> Tensor:
        """Caption loss for a batch; ``captions`` are token ids without BOS/EOS.

        ``pair`` is an optional leading ``(inputs, captions)`` batch whose
        captions share one length; it goes between BOS and each example.
        """
        emb = self.lm.embedding_matrix()
        prompts = self._prompts(inputs)
        B, k = prompts.shape[0], prompts.shape[1]
        ids = pad_batch([np.concatenate([c, [EOS]]) for c in captions])
        T = ids.shape[1]
        parts = [Tensor(np.broadcast_to(emb[BOS], (B, 1, emb.shape[1])).copy())]
        pos = 1
        scored = []  # (first position predicting, target ids, mask)
        if pair is not None:
            c_ids = np.stack([np.asarray(c, dtype=np.int64) for c in pair[1]])
            parts += [self._prompts(pair[0]), Tensor(emb[c_ids])]
            # the pair's last word is followed by the next image, so it predicts nothing
            scored.append((pos + k - 1, c_ids, np.ones_like(c_ids, dtype=bool)))
            pos += k + c_ids.shape[1]
        parts.append(prompts)
        # input tokens are the caption shifted right: the last prompt predicts the first word
        if T > 1:
            parts.append(Tensor(emb[ids[:, :-1]]))
        scored.append((pos + k - 1, ids, ids != PAD))
        logits = self.lm.forward_embeds(concat(parts, axis=1), training=training and self.cfg.dropout > 0,
                                        dropout_key=(self.cfg.seed, step, 0x11))
        preds = [getitem(logits, (slice(None), slice(at, at + t.shape[1]))) for at, t, _ in scored]
        pred = preds[0] if len(preds) == 1 else concat(preds, axis=1)
        return cross_entropy(pred, np.concatenate([t for _, t, _ in scored], axis=1),
                             np.concatenate([m for _, _, m in scored], axis=1))

    def _prompts(self, inputs: np.ndarray) -> Tensor:
        feats = self.encoder.forward(Tensor(inputs)) if self.tune else Tensor(inputs)
        return self.proj.forward(feats)

    def step(self, inputs: np.ndarray, captions: Sequence[np.ndarray],
             pair: tuple[np.ndarray, Sequence[np.ndarray]] | None = None) -> float:
        step = self.state.step
        with Tape() as tape:
            loss = self.loss(inputs, captions, step, pair=pair)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step}")
        tape.backward(loss)
        clip_global_norm(self.trainable_parameters(), self.cfg.clip)
        self.opt.step()
        self.state.step += 1
        if step % self.cfg.log_every == 0:
            self.state.history.append((step, value))
            log.info("limber step %d loss %.4f", step, value)
        return value

    def fit(self, inputs: np.ndarray, captions: Sequence[np.ndarray], until: int | None = None) -> None:
        """Train until ``until`` steps have been taken (default: the configured total)."""
        until = self.cfg.steps if until is None else until
        n = len(captions)
        by_len: dict[int, np.ndarray] = {}
        if self.cfg.paired > 0:
            lengths = np.array([len(c) for c in captions])
            by_len = {int(L): np.flatnonzero(lengths == L) for L in np.unique(lengths)}
        while self.state.step < until:
            step = self.state.step
            idx = batch_indices(n, self.cfg.batch_size, self.cfg.seed, step)
            pair = None
            rng = np.random.default_rng([self.cfg.seed, step, 0xC7])
            if by_len and rng.random() < self.cfg.paired:
                # one caption length per step keeps the leading pair unpadded
                pool = by_len[int(len(captions[idx[rng.integers(len(idx))]]))]
                j = pool[rng.integers(0, len(pool), size=len(idx))]
                pair = (inputs[j], [captions[i] for i in j])
            self.step(inputs[idx], [captions[i] for i in idx], pair)

    def check_frozen(self) -> None:
        if self.lm.content_hash() != self.lm_hash:
            raise container.IntegrityError("LM parameters changed during projection training")
        if self.encoder is not None and not self.tune and self.encoder.content_hash() != self.encoder_hash:
            raise container.IntegrityError("encoder parameters changed during projection training")

    # checkpoints ----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        path = Path(path)
        tensors = {k: v.data for k, v in self.proj.params.items()}
        tensors.update(self.opt.state_tensors())
        if self.tune:
            tensors.update({f"encoder.{k}": v.data for k, v in self.encoder.params.items()})
        container.save(path, tensors)
        manifest = {
            "config": asdict(self.cfg),
            "projection": self.proj.header(),
            "step": self.state.step,
            "adam_step": self.opt.step_count,
            "seed": self.cfg.seed,
            "tune_encoder": self.tune,
            "lm_hash": self.lm_hash,
            "encoder_hash": self.encoder_hash,
            "history": self.state.history,
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load_checkpoint(cls, path, lm: DecoderLM, encoder: EncoderModel | None = None) -> "LimberTrainer":
        """Restore a trainer mid-run; the batch stream is counter based, so the
        step number alone fixes all later randomness."""
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        tensors = container.load(path)
        if lm.content_hash() != manifest["lm_hash"]:
            raise container.IntegrityError("LM hash does not match the checkpoint")
        tune = manifest["tune_encoder"]
        if manifest["encoder_hash"] is not None:
            if encoder is None:
                raise container.IntegrityError("checkpoint was trained against an encoder that was not supplied")
            if encoder.content_hash() != manifest["encoder_hash"]:
                raise container.IntegrityError("encoder hash does not match the checkpoint")
        ph = manifest["projection"]
        proj = Projection(ph["mode"], ph["in_dim"], ph["k"], ph["e_L"], ph["n_tokens"], ph["seed"])
        proj.load_state_dict({k: tensors[k] for k in proj.params})
        cfg = LimberTrainConfig(**manifest["config"])
        trainer = cls(lm, proj, cfg, encoder, tune_encoder=tune)
        if tune:
            encoder.load_state_dict({k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")})
        trainer.opt.load_state_tensors(tensors, manifest["adam_step"])
        trainer.state = TrainState(manifest["step"], [tuple(h) for h in manifest["history"]])
        return trainer


def train_projection(lm: DecoderLM, inputs: np.ndarray, captions: Sequence[np.ndarray],
                     config: LimberTrainConfig | None = None, projection: Projection | None = None,
                     encoder: EncoderModel | None = None, tune_encoder: bool = False) -> LimberTrainer:
    """Fit the projection on (features, caption ids) pairs; LM and encoder stay frozen.

    Pass ``encoder`` to have its hash checked (frozen mode) or to tune it at
    ``lr_encoder`` (``tune_encoder=True``, then ``inputs`` are observations).
    """
    cfg = config or LimberTrainConfig()
    if projection is None:
        if encoder is None:
            raise ValueError("need a projection or an encoder to derive one from")
        from .encoders import DEFAULT_PROMPT_LEN

        projection = projection_for(encoder.geometry, lm.d_model, DEFAULT_PROMPT_LEN[encoder.variant], seed=cfg.seed)
    trainer = LimberTrainer(lm, projection, cfg, encoder, tune_encoder)
    trainer.fit(inputs, captions)
    trainer.check_frozen()
    return trainer


def caption_ids(vocab: Vocabulary, captions: Sequence[str]) -> list[np.ndarray]:
    return [np.array(vocab.tokenize(c), dtype=np.int64) for c in captions]


def teacher_forced_accuracy(lm: DecoderLM, proj: Projection, feats: np.ndarray, captions: Sequence[np.ndarray],
                            batch_size: int = 256) -> tuple[float, float]:
    """(next-token accuracy, mean token NLL) over caption tokens + EOS on held-out pairs."""
    emb = lm.embedding_matrix()
    hits = total = 0
    nll = 0.0
    for s in range(0, len(captions), batch_size):
        caps = captions[s : s + batch_size]
        prompts = proj.project(feats[s : s + batch_size])
        ids = pad_batch([np.concatenate([c, [EOS]]) for c in caps])
        B, k, T = len(caps), prompts.shape[1], ids.shape[1]
        x = np.concatenate([np.broadcast_to(emb[BOS], (B, 1, emb.shape[1])), prompts, emb[ids[:, :-1]]], axis=1)
        logits = lm.forward_embeds(Tensor(x)).data[:, k : k + T].astype(np.float64)
        m = ids != PAD
        hits += int(((logits.argmax(-1) == ids) & m).sum())
        z = logits - logits.max(-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
        nll -= float((np.take_along_axis(logp, ids[..., None], -1)[..., 0] * m).sum())
        total += int(m.sum())
    return hits / total, nll / total
