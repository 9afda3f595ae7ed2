"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils import check_array

from .scoremodel import Condition, MixtureModel


def check_latents(X, dim: int | None = None) -> np.ndarray:
    """2-D finite float array of latents, optionally of width ``dim``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"X has {X.shape[1]} features, expected {dim}")
    return X


def as_condition(c) -> Condition:
    if isinstance(c, Condition):
        return c
    if c is None or isinstance(c, str):
        return Condition(c)
    raise TypeError(f"cannot interpret {c!r} as a condition")


def check_models(models, conditions=None) -> tuple[list[MixtureModel], list[Condition]]:
    """Normalize ``models`` / ``conditions`` to equal-length lists and resolve labels."""
    if isinstance(models, MixtureModel):
        models = [models]
    models = list(models)
    if not models or not all(isinstance(m, MixtureModel) for m in models):
        raise TypeError("models must be MixtureModel instances")
    if conditions is None or isinstance(conditions, (str, Condition)):
        conditions = [conditions] * len(models)
    conditions = [as_condition(c) for c in conditions]
    if len(conditions) != len(models):
        raise ValueError(f"got {len(conditions)} conditions for {len(models)} models")
    if len({m.dim for m in models}) != 1:
        raise ValueError("models disagree on latent dimension")
    for m, c in zip(models, conditions):
        m.component_ids(c)
    return models, conditions


def check_seeds(n_samples: int, random_state: int | None) -> list[int]:
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    base = 0 if random_state is None else int(random_state)
    return [base + i for i in range(int(n_samples))]


def check_weights(weights: Sequence[float], n_models: int) -> tuple[float, ...]:
    w = tuple(float(x) for x in np.atleast_1d(weights))
    if len(w) != n_models - 1:
        raise ValueError(f"need {n_models - 1} interpolation weights, got {len(w)}")
    return w
