"""Deterministic seed derivation.

Every random decision in the toolkit draws from a generator keyed by a master
seed plus a path of string/int tags (e.g. ``(master, "model", "rf", "aware",
fold)``). Derived seeds depend only on their own path, so adding a model to a
grid or a column to a matrix never perturbs anyone else's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags: int | str) -> int:
    """Map (master, *tags) to a stable 64-bit seed via SHA-256."""
    key = "|".join([str(int(master))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master: int, *tags: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
