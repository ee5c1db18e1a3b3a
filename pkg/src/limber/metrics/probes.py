"""Linear probes over frozen features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    pass


TASKS = ("multilabel", "single-label")


@dataclass
class ProbeConfig:
    task: str = "single-label"
    lr: float = 1e-4
    batch: int = 32
    max_epochs: int = 300
    threshold: float = 0.5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"probe task must be one of {TASKS}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie strictly between 0 and 1")
        if self.batch < 1 or self.max_epochs < 1:
            raise ConfigError("batch and max_epochs must be positive")


@dataclass
class Probe:
    weight: np.ndarray
    bias: np.ndarray
    task: str
    threshold: float = 0.5
    epochs: int = 0

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _flat(x) @ self.weight + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        if self.task == "single-label":
            return np.argmax(z, axis=1)
        return (_sigmoid(z) > self.threshold).astype(np.int8)


def _flat(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(len(x), -1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _loss_grad(z: np.ndarray, y: np.ndarray, task: str) -> tuple[float, np.ndarray]:
    n = len(z)
    if task == "single-label":
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -float(logp[np.arange(n), y].mean())
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        return loss, g / n
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return loss, (_sigmoid(z) - y) / z.size


def train_probe(features: np.ndarray, labels: np.ndarray, config: ProbeConfig | None = None,
                n_classes: int | None = None) -> Probe:
    """Fit one linear layer with Adam, keeping the weights of the epoch with
    the lowest held-out loss (a ``val_fraction`` slice, fixed by ``seed``)."""
    cfg = config or ProbeConfig()
    x = _flat(features)
    y = np.asarray(labels)
    if len(x) != len(y):
        raise ConfigError("features and labels differ in length")
    if cfg.task == "single-label":
        y = y.astype(np.int64)
        if len(np.unique(y)) < 2:
            raise ConfigError("single-label probe needs at least two classes")
        n_out = n_classes or int(y.max()) + 1
    else:
        y = y.astype(np.float64).reshape(len(y), -1)
        if np.all(y == y[:1]):
            raise ConfigError("multilabel probe needs labels that vary across examples")
        n_out = y.shape[1]
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x))
    n_val = int(round(len(x) * cfg.val_fraction))
    val, train = order[:n_val], order[n_val:]
    w = np.zeros((x.shape[1], n_out))
    b = np.zeros(n_out)
    m = [np.zeros_like(w), np.zeros_like(b)]
    v = [np.zeros_like(w), np.zeros_like(b)]
    b1, b2 = cfg.betas
    t = 0
    best = (np.inf, w.copy(), b.copy(), 0)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = train[rng.permutation(len(train))]
        for s in range(0, len(perm), cfg.batch):
            idx = perm[s : s + cfg.batch]
            xb = x[idx]
            _, g = _loss_grad(xb @ w + b, y[idx], cfg.task)
            t += 1
            for i, (p, gp) in enumerate(((w, xb.T @ g), (b, g.sum(axis=0)))):
                m[i] = b1 * m[i] + (1 - b1) * gp
                v[i] = b2 * v[i] + (1 - b2) * gp * gp
                mh = m[i] / (1 - b1**t)
                vh = v[i] / (1 - b2**t)
                p -= cfg.lr * mh / (np.sqrt(vh) + cfg.eps)
        if n_val == 0:
            best = (0.0, w.copy(), b.copy(), epoch)
            continue
        loss, _ = _loss_grad(x[val] @ w + b, y[val], cfg.task)
        if loss < best[0] - 1e-6:
            best, stale = (loss, w.copy(), b.copy(), epoch), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return Probe(best[1], best[2], cfg.task, cfg.threshold, best[3])


def prf(pred: np.ndarray, gold: np.ndarray, classes: int) -> dict:
    """Per-class precision/recall/F1 for integer labels, plus macro averages and accuracy."""
    p, r, f = np.zeros(classes), np.zeros(classes), np.zeros(classes)
    for c in range(classes):
        tp = np.sum((pred == c) & (gold == c))
        fp = np.sum((pred == c) & (gold != c))
        fn = np.sum((pred != c) & (gold == c))
        p[c] = tp / (tp + fp) if tp + fp else 0.0
        r[c] = tp / (tp + fn) if tp + fn else 0.0
        f[c] = 2 * p[c] * r[c] / (p[c] + r[c]) if p[c] + r[c] else 0.0
    present = np.unique(gold)
    return {"precision": p, "recall": r, "f1": f, "macro_f1": float(f[present].mean()),
            "accuracy": float(np.mean(pred == gold))}


def eval_probe(probe: Probe, features: np.ndarray, labels: np.ndarray) -> dict:
    """Single-label: accuracy and per-class P/R/F1 (macro F1 over classes
    present in ``labels``). Multilabel: per-label P/R/F1 and their macro mean."""
    pred = probe.predict(features)
    if probe.task == "single-label":
        return prf(pred, np.asarray(labels, dtype=np.int64), probe.weight.shape[1])
    gold = np.asarray(labels).reshape(len(labels), -1) > 0
    pred = pred > 0
    tp = (pred & gold).sum(axis=0)
    fp = (pred & ~gold).sum(axis=0)
    fn = (~pred & gold).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        r = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        f = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)
    return {"precision": p, "recall": r, "f1": f, "macro_f1": float(f.mean()),
            "accuracy": float(np.mean(pred == gold))}


def shuffled_control(features: np.ndarray, labels: np.ndarray, test_features: np.ndarray, test_labels: np.ndarray,
                     config: ProbeConfig | None = None, seed: int = 0, n_classes: int | None = None) -> dict:
    """Train on labels permuted across examples, evaluate against the true test labels."""
    perm = np.random.default_rng(seed).permutation(len(labels))
    probe = train_probe(features, np.asarray(labels)[perm], config, n_classes)
    return eval_probe(probe, test_features, test_labels)
