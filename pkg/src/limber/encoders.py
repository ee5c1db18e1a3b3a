"""Observation encoders spanning the supervision spectrum.

Four variants share an MLP trunk and differ only in what they are trained on:

* ``classifier``: category labels (softmax cross-entropy), pooled output.
* ``contrastive``: captions, through symmetric InfoNCE against a bag-of-words
  text tower; outputs a small grid of tokens.
* ``ssl``: nothing but the observations, via masked-patch regression through a
  narrow latent; outputs one token per patch.
* ``random``: a deep tanh stack at initialisation, never trained.

All are frozen before anyone else sees them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .lm import TrainingError, batch_indices
from .nn import Module, fan_in_normal, linear
from .optim import AdamW, clip_global_norm
from .tensor import (
    Tape,
    Tensor,
    concat,
    cross_entropy,
    exp,
    gelu,
    l2_normalize,
    matmul,
    mean,
    mse,
    reshape,
    swapaxes,
    tanh,
)

log = logging.getLogger(__name__)

VARIANTS = ("contrastive", "classifier", "ssl", "random")


class ConfigError(ValueError):
    pass


class CapabilityError(RuntimeError):
    """The encoder lacks a component an operation needs (e.g. a text tower)."""


@dataclass(frozen=True)
class Geometry:
    """Output layout: ``pooled`` is one vector of ``width``; ``grid`` is ``n_tokens`` x ``width``."""

    kind: str
    n_tokens: int
    width: int

    @property
    def h_I(self) -> int:
        return self.width

    @property
    def flat_dim(self) -> int:
        return self.n_tokens * self.width


DEFAULT_GEOMETRY = {
    "contrastive": Geometry("grid", 4, 64),
    "classifier": Geometry("pooled", 1, 48),
    "ssl": Geometry("grid", 9, 32),
    "random": Geometry("pooled", 1, 48),
}
DEFAULT_PROMPT_LEN = {"contrastive": 4, "classifier": 2, "ssl": 9, "random": 2}
# geometry of the real encoders these stand in for: (h_I, prompt length)
PAPER_GEOMETRY = {"contrastive": (3072, 144), "classifier": (2048, 2), "ssl": (1024, 196), "random": (2048, 2)}


@dataclass
class EncoderTrainConfig:
    steps: int = 2000
    batch_size: int = 128
    lr: float = 2e-3
    weight_decay: float = 1e-4
    clip: float = 1.0
    seed: int = 0
    hidden: int = 128
    ssl_latent: int = 18
    mask_ratio: float = 0.4
    text_dim: int = 32
    random_gain: float = 4.0
    random_depth: int = 12
    log_every: int = 250
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must be in [0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")


class EncoderModel(Module):
    """Frozen-after-training observation encoder."""

    def __init__(self, variant: str, d_obs: int, geometry: Geometry, hidden: int = 128, seed: int = 0,
                 n_patches: int = 1, ssl_latent: int = 18, gain: float = 1.0, depth: int = 2):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {variant!r}")
        if depth < 2:
            raise ConfigError("encoder trunk needs at least two layers")
        self.variant = variant
        self.d_obs = d_obs
        self.geometry = geometry
        self.hidden = hidden
        self.n_patches = n_patches
        self.ssl_latent = ssl_latent
        self.seed = seed
        self.gain = gain
        self.depth = depth
        rng = np.random.default_rng([seed, 0xE1C])
        widths = [d_obs + (n_patches if variant == "ssl" else 0)] + [hidden] * (depth - 1)
        widths.append(ssl_latent if variant == "ssl" else hidden)
        for i in range(depth):
            self.add_param(f"trunk{i}.w", fan_in_normal(rng, widths[i], widths[i + 1], gain))
            self.add_param(f"trunk{i}.b", np.zeros(widths[i + 1]))
        self.add_param("out.w", fan_in_normal(rng, widths[-1], geometry.flat_dim, gain))
        self.add_param("out.b", np.zeros(geometry.flat_dim))
        self.meta: dict = {}

    def feature_parameters(self) -> list[Tensor]:
        """The tensors that produce features; pretraining heads and towers are excluded."""
        return [p for k, p in self.params.items() if k.startswith(("trunk", "out."))]

    def forward(self, obs: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Features ``[N, h]`` (pooled) or ``[N, n_tokens, h]`` (grid)."""
        x = obs
        if self.variant == "ssl":
            if mask is None:
                mask = np.zeros((obs.shape[0], self.n_patches), dtype=obs.data.dtype)
            keep = np.repeat(1.0 - mask, self.d_obs // self.n_patches, axis=1).astype(obs.data.dtype)
            x = concat([obs * keep, Tensor(mask.astype(obs.data.dtype))], axis=1)
        act = tanh if self.variant == "random" else gelu
        h = x
        for i in range(self.depth):
            h = linear(h, self.params[f"trunk{i}.w"], self.params[f"trunk{i}.b"])
            # the ssl latent stays linear: it is the bottleneck
            if not (self.variant == "ssl" and i == self.depth - 1):
                h = act(h)
        out = tanh(linear(h, self.params["out.w"], self.params["out.b"]))
        g = self.geometry
        if g.kind == "grid":
            return reshape(out, (obs.shape[0], g.n_tokens, g.width))
        return out

    def encode(self, obs: np.ndarray, batch_size: int = 2048) -> np.ndarray:
        """Frozen features for a batch of observations (no tape)."""
        outs = []
        for s in range(0, len(obs), batch_size):
            outs.append(self.forward(Tensor(np.asarray(obs[s : s + batch_size]))).data)
        if not outs:
            g = self.geometry
            shape = (0, g.width) if g.kind == "pooled" else (0, g.n_tokens, g.width)
            return np.zeros(shape, dtype=np.float32)
        return np.concatenate(outs)

    # contrastive towers ----------------------------------------------------

    @property
    def has_text_tower(self) -> bool:
        return "text.emb" in self.params

    def image_embedding(self, feats: Tensor) -> Tensor:
        pooled = mean(feats, axis=1) if feats.ndim == 3 else feats
        return l2_normalize(linear(pooled, self.params["joint.w"], self.params["joint.b"]))

    def text_embedding(self, bow: np.ndarray) -> Tensor:
        emb = matmul(Tensor(bow.astype(self.params["text.emb"].data.dtype)), self.params["text.emb"])
        return l2_normalize(linear(gelu(emb), self.params["text.w"], self.params["text.b"]))

    def bag_of_words(self, captions: Sequence[str]) -> np.ndarray:
        words = self.meta.get("text_vocab")
        if words is None:
            raise CapabilityError("this encoder has no text tower")
        index = {w: i for i, w in enumerate(words)}
        bow = np.zeros((len(captions), len(words)), dtype=np.float32)
        for r, cap in enumerate(captions):
            toks = [index[t] for t in cap.lower().split() if t in index]
            for t in toks:
                bow[r, t] += 1.0 / len(toks)
        return bow

    def embed_images(self, obs: np.ndarray) -> np.ndarray:
        if not self.has_text_tower:
            raise CapabilityError("this encoder has no contrastive towers")
        return self.image_embedding(Tensor(self.encode(obs))).data

    def embed_texts(self, captions: Sequence[str]) -> np.ndarray:
        if not self.has_text_tower:
            raise CapabilityError("this encoder has no contrastive towers")
        return self.text_embedding(self.bag_of_words(captions)).data

    # persistence -------------------------------------------------------------

    def header(self) -> dict:
        return {
            "variant": self.variant,
            "d_obs": self.d_obs,
            "geometry": asdict(self.geometry),
            "hidden": self.hidden,
            "n_patches": self.n_patches,
            "ssl_latent": self.ssl_latent,
            "seed": self.seed,
            "gain": self.gain,
            "depth": self.depth,
            "meta": self.meta,
            "hash": self.content_hash(),
        }

    def save(self, path) -> None:
        import json

        path = Path(path)
        container.save(path, self.state_dict())
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EncoderModel":
        import json

        path = Path(path)
        h = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        model = cls(h["variant"], h["d_obs"], Geometry(**h["geometry"]), h["hidden"], h["seed"],
                    h["n_patches"], h["ssl_latent"], h["gain"], h["depth"])
        state = container.load(path)
        for name, arr in state.items():
            if name not in model.params:
                model.add_param(name, arr)
        model.load_state_dict(state)
        model.meta = h.get("meta", {})
        if model.content_hash() != h["hash"]:
            raise container.IntegrityError(f"encoder hash mismatch for {path}")
        return model.freeze()


def _new_encoder(variant: str, d_obs: int, n_patches: int, cfg: EncoderTrainConfig,
                 geometry: Geometry | None = None) -> EncoderModel:
    geometry = geometry or DEFAULT_GEOMETRY[variant]
    if variant == "ssl" and geometry.kind == "grid" and geometry.n_tokens != n_patches:
        raise ConfigError("ssl grid must have one token per patch")
    if variant == "random":
        return EncoderModel(variant, d_obs, geometry, cfg.hidden, cfg.seed, n_patches, cfg.ssl_latent,
                            cfg.random_gain, cfg.random_depth)
    return EncoderModel(variant, d_obs, geometry, cfg.hidden, cfg.seed, n_patches, cfg.ssl_latent)


def _train_loop(model: EncoderModel, n: int, cfg: EncoderTrainConfig, loss_fn) -> None:
    params = model.trainable()
    opt = AdamW.create(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    for step in range(cfg.steps):
        lr = cfg.lr * 0.5 * (1 + math.cos(math.pi * step / max(1, cfg.steps)))
        opt.groups[0].lr = max(lr, cfg.lr * 0.02)
        idx = batch_indices(n, cfg.batch_size, cfg.seed, step)
        with Tape() as tape:
            loss = loss_fn(idx, step)
        if not np.isfinite(loss.data):
            raise TrainingError(f"{model.variant} encoder diverged at step {step}")
        tape.backward(loss)
        clip_global_norm(params, cfg.clip)
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            cfg.history.append((step, float(loss.data)))
            log.info("%s encoder step %d loss %.4f", model.variant, step, float(loss.data))


def pretrain_encoder_classifier(observations: np.ndarray, labels: np.ndarray, n_classes: int,
                                config: EncoderTrainConfig | None = None, n_patches: int = 1) -> EncoderModel:
    cfg = config or EncoderTrainConfig()
    obs = np.asarray(observations, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    model = _new_encoder("classifier", obs.shape[1], n_patches, cfg)
    rng = np.random.default_rng([cfg.seed, 0xC1A])
    g = model.geometry
    model.add_param("head.w", fan_in_normal(rng, g.flat_dim, n_classes))
    model.add_param("head.b", np.zeros(n_classes))

    def loss_fn(idx, step):
        feats = model.forward(Tensor(obs[idx]))
        flat = reshape(feats, (len(idx), g.flat_dim))
        logits = linear(flat, model.params["head.w"], model.params["head.b"])
        return cross_entropy(logits, labels[idx])

    _train_loop(model, len(obs), cfg, loss_fn)
    return model.freeze()


def classifier_accuracy(model: EncoderModel, observations: np.ndarray, labels: np.ndarray) -> float:
    feats = model.encode(observations).reshape(len(observations), -1)
    logits = feats @ model.params["head.w"].data + model.params["head.b"].data
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def pretrain_encoder_contrastive(observations: np.ndarray, captions: Sequence[str], text_vocab: Sequence[str],
                                 config: EncoderTrainConfig | None = None, n_patches: int = 1) -> EncoderModel:
    """Symmetric InfoNCE between image features and a bag-of-words text tower.

    The logit scale is learned and starts at 1, so the loss at initialisation
    is close to ``ln(batch_size)``.
    """
    cfg = config or EncoderTrainConfig()
    obs = np.asarray(observations, dtype=np.float32)
    if len(obs) != len(captions):
        raise ConfigError("observations and captions must pair up")
    model = _new_encoder("contrastive", obs.shape[1], n_patches, cfg)
    model.meta["text_vocab"] = list(text_vocab)
    rng = np.random.default_rng([cfg.seed, 0xC0E])
    g, d = model.geometry, cfg.text_dim
    model.add_param("joint.w", fan_in_normal(rng, g.width, d))
    model.add_param("joint.b", np.zeros(d))
    model.add_param("text.emb", rng.normal(0.0, 1.0, size=(len(text_vocab), d)))
    model.add_param("text.w", fan_in_normal(rng, d, d))
    model.add_param("text.b", np.zeros(d))
    model.add_param("logit_scale", np.zeros(1))
    bow = model.bag_of_words(captions)
    targets = np.arange(cfg.batch_size)

    def loss_fn(idx, step):
        img = model.image_embedding(model.forward(Tensor(obs[idx])))
        txt = model.text_embedding(bow[idx])
        scale = exp(model.params["logit_scale"])
        sims = matmul(img, swapaxes(txt, 0, 1)) * scale
        return (cross_entropy(sims, targets) + cross_entropy(swapaxes(sims, 0, 1), targets)) * 0.5

    _train_loop(model, len(obs), cfg, loss_fn)
    return model.freeze()


def retrieval_at_1(model: EncoderModel, observations: np.ndarray, captions: Sequence[str], batch: int = 64,
                   shuffle_seed: int | None = None) -> float:
    """Image-to-text R@1 within consecutive blocks of ``batch`` pairs.

    A retrieved caption counts as correct when its text equals the paired one.
    With ``shuffle_seed`` the pairing is permuted first (chance control).
    """
    captions = list(captions)
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(len(captions))
        captions = [captions[i] for i in perm]
    img = model.embed_images(observations)
    txt = model.embed_texts(captions)
    hits, total = 0, 0
    for s in range(0, len(img) - batch + 1, batch):
        sims = img[s : s + batch] @ txt[s : s + batch].T
        best = np.argmax(sims, axis=1)
        for i, j in enumerate(best):
            hits += captions[s + j] == captions[s + i]
            total += 1
    return hits / max(total, 1)


def ssl_masks(n: int, n_patches: int, ratio: float, seed: int, step: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step, 0x55])
    n_mask = int(round(ratio * n_patches))
    mask = np.zeros((n, n_patches), dtype=np.float32)
    if n_mask:
        order = np.argsort(rng.random((n, n_patches)), axis=1)[:, :n_mask]
        np.put_along_axis(mask, order, 1.0, axis=1)
    return mask


def pretrain_encoder_ssl(observations: np.ndarray, n_patches: int,
                         config: EncoderTrainConfig | None = None) -> EncoderModel:
    """Masked-patch regression. Only observations go in: no labels, no captions.

    With ``mask_ratio == 0`` nothing is hidden and the objective becomes plain
    autoencoding over every patch.
    """
    cfg = config or EncoderTrainConfig()
    obs = np.asarray(observations, dtype=np.float32)
    model = _new_encoder("ssl", obs.shape[1], n_patches, cfg)
    rng = np.random.default_rng([cfg.seed, 0x55D])
    g = model.geometry
    d_patch = obs.shape[1] // n_patches
    model.add_param("decoder.w", fan_in_normal(rng, g.width, d_patch))
    model.add_param("decoder.b", np.zeros((n_patches, d_patch)))
    patches = obs.reshape(len(obs), n_patches, d_patch)

    def loss_fn(idx, step):
        mask = ssl_masks(len(idx), n_patches, cfg.mask_ratio, cfg.seed, step)
        feats = model.forward(Tensor(obs[idx]), mask)
        pred = matmul(feats, model.params["decoder.w"]) + model.params["decoder.b"]
        target_mask = mask if mask.any() else np.ones_like(mask)
        return mse(pred, patches[idx], np.broadcast_to(target_mask[..., None], pred.shape))

    _train_loop(model, len(obs), cfg, loss_fn)
    return model.freeze()


def ssl_masked_mse(model: EncoderModel, observations: np.ndarray, ratio: float, seed: int = 0) -> tuple[float, float]:
    """(model MSE, per-patch-mean baseline MSE) on masked patches of held-out data."""
    obs = np.asarray(observations, dtype=np.float32)
    n_patches = model.n_patches
    d_patch = obs.shape[1] // n_patches
    patches = obs.reshape(len(obs), n_patches, d_patch)
    mask = ssl_masks(len(obs), n_patches, ratio, seed, 0)
    feats = model.forward(Tensor(obs), mask).data
    pred = feats @ model.params["decoder.w"].data + model.params["decoder.b"].data
    m = mask.astype(bool)
    err = float(np.mean((pred[m] - patches[m]) ** 2))
    base = float(np.mean((patches.mean(axis=0, keepdims=True).repeat(len(obs), 0)[m] - patches[m]) ** 2))
    return err, base


def random_encoder(geometry: Geometry, seed: int, d_obs: int, gain: float = 4.0, hidden: int = 128,
                   depth: int = 12) -> EncoderModel:
    """Initialised and immediately frozen. No data of any kind is consumed.

    The trunk is a deep tanh stack at fan-in-scaled gain, standing in for a
    deep randomly initialised network; a shallow random MLP is close to a random
    projection and keeps far more of its input than such a network does.
    """
    return EncoderModel("random", d_obs, geometry, hidden, seed, 1, 18, gain, depth).freeze()
