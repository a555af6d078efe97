"""Model-agnostic permutation feature importance scored by macro-F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .metrics import macro_f1
from .rng import derive_rng


@dataclass(frozen=True)
class FeatureImportance:
    mean_drop: float
    std_drop: float
    repeats: int


@dataclass(frozen=True)
class ImportanceResult:
    baseline_score: float
    features: dict[str, FeatureImportance]
    split: str  # "train" or "test"

    def ranked(self) -> list[tuple[str, FeatureImportance]]:
        return sorted(self.features.items(), key=lambda kv: (-kv[1].mean_drop, kv[0]))


def _rng_for(seed: int, column_key: int, repeat: int) -> np.random.Generator:
    # one independent stream per (column, repeat); tests may monkeypatch this
    return derive_rng(seed, "perm", column_key, repeat)


def permutation_importance(
    model,
    X,
    y,
    n_repeats: int = 10,
    seed: int = 0,
    column_names: tuple[str, ...] | None = None,
    grouped_columns: dict[str, tuple[int, ...]] | None = None,
    split: str = "test",
) -> ImportanceResult:
    """Score drop after shuffling each column, averaged over ``n_repeats``.

    Each (column, repeat) pair draws its own permutation stream, so results do
    not depend on evaluation order. ``grouped_columns`` adds entries whose
    listed columns are shuffled jointly with a single permutation (used to
    report one-hot blocks as a single feature). The caller's X is never
    mutated.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"model expects {model.n_features} columns, got matrix of shape {X.shape}"
        )
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    d = X.shape[1]
    if column_names is None:
        column_names = tuple(f"x{j}" for j in range(d))
    if len(column_names) != d:
        raise DimensionMismatch(f"{len(column_names)} names for {d} columns")

    baseline = macro_f1(y, model.predict(X))
    targets: list[tuple[str, int, tuple[int, ...]]] = [
        (name, j, (j,)) for j, name in enumerate(column_names)
    ]
    for gi, (name, cols) in enumerate(sorted((grouped_columns or {}).items())):
        targets.append((name, d + gi, tuple(int(c) for c in cols)))

    features = {}
    for name, stream_key, cols in targets:
        drops = np.empty(n_repeats)
        for r in range(n_repeats):
            rng = _rng_for(seed, stream_key, r)
            perm = rng.permutation(len(y))
            shuffled = X.copy()
            shuffled[:, cols] = shuffled[np.ix_(perm, cols)]
            drops[r] = baseline - macro_f1(y, model.predict(shuffled))
        features[name] = FeatureImportance(
            mean_drop=float(drops.mean()),
            std_drop=float(drops.std()),
            repeats=n_repeats,
        )
    return ImportanceResult(baseline_score=float(baseline), features=features, split=split)
