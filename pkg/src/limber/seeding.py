"""Keyed seed derivation. Every random draw in the package starts here."""
from __future__ import annotations

import hashlib

import numpy as np

STAGES = (
    "world",
    "dataset",
    "lm",
    "encoder.contrastive",
    "encoder.classifier",
    "encoder.ssl",
    "encoder.random",
    "limber",
    "eval",
    "probe",
)


def derive_seed(master: int, *names: str | int) -> int:
    """63-bit seed from SHA-256 of the master seed and a path of names."""
    key = "/".join([str(int(master))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def seed_everything(master: int, stages=STAGES) -> dict[str, int]:
    return {s: derive_seed(master, s) for s in stages}


def rng(master: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))
