"""Shapley-value attributions over column-level coalitions.

Columns (not one-hot atoms) play the coalition game: a column either takes
the instance's value or a background row's value, and the value of a
coalition is the mean target-class probability over the background set.
Exact mode enumerates all 2^m coalitions and applies the Shapley formula;
sampled mode draws coalitions from the Shapley kernel distribution and
solves the constrained weighted least-squares system, so the efficiency
identity (base value plus attributions equals the prediction) holds by
construction in both modes.
"""

from __future__ import annotations

import itertools
import math
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import InvalidConfig, TooManyFeaturesForExact
from .common import Attribution, PredictTarget

EXACT_LIMIT = 12


def _background_rows(target: PredictTarget, background) -> list[dict]:
    if background:
        return [target.validate_row(b) for b in background]
    if target.dataset is not None and target.dataset.rows:
        count = min(5, len(target.dataset.rows))
        return [target.dataset.row_as_dict(i, include_target=False) for i in range(count)]
    raise InvalidConfig("SHAP needs background rows; none given and no dataset available")


def _coalition_value_fn(target: PredictTarget, instance: dict, background: list[dict], ci: int):
    groups = target.encoder.groups
    cache: dict[int, float] = {}

    def value(mask: int) -> float:
        if mask in cache:
            return cache[mask]
        total = 0.0
        for bg in background:
            hybrid = dict(instance)
            for gi, group in enumerate(groups):
                if not mask & (1 << gi):
                    hybrid[group.column] = bg[group.column]
            total += float(target.proba(hybrid)[ci])
        cache[mask] = total / len(background)
        return cache[mask]

    return value


def _exact_shapley(value, m: int) -> np.ndarray:
    weights = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    phi = np.zeros(m)
    for subset in itertools.chain.from_iterable(
        itertools.combinations(range(m), size) for size in range(m)
    ):
        mask = 0
        for j in subset:
            mask |= 1 << j
        w = weights[len(subset)]
        base = value(mask)
        for i in range(m):
            if not mask & (1 << i):
                phi[i] += w * (value(mask | (1 << i)) - base)
    return phi


def _sampled_shapley(value, m: int, samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = value(0)
    full = (1 << m) - 1
    delta = value(full) - base

    if m == 1:
        return np.array([delta])

    size_weights = np.array([(m - 1) / (s * (m - s)) for s in range(1, m)])
    size_probs = size_weights / size_weights.sum()
    counts: dict[int, int] = {}
    for _ in range(samples):
        size = 1 + rng.choice(m - 1, p=size_probs)
        members = rng.choice(m, size=size, replace=False)
        mask = 0
        for j in members:
            mask |= 1 << j
        counts[mask] = counts.get(mask, 0) + 1

    masks = sorted(counts)
    Z = np.array([[1.0 if mask & (1 << j) else 0.0 for j in range(m)] for mask in masks])
    w = np.sqrt(np.array([counts[mask] for mask in masks], dtype=float))
    y = np.array([value(mask) - base for mask in masks])

    # eliminate the last attribution through the efficiency constraint
    B = (Z[:, :-1] - Z[:, [-1]]) * w[:, None]
    t = (y - Z[:, -1] * delta) * w
    head, *_ = np.linalg.lstsq(B, t, rcond=None)
    phi = np.concatenate([head, [delta - head.sum()]])
    return phi


def explain_shap(
    target: PredictTarget,
    instance: Mapping[str, Any],
    background: Sequence[Mapping[str, Any]] | None = None,
    mode: str = "exact",
    samples: int = 2048,
    seed: int = 0,
    target_class: str | None = None,
) -> Attribution:
    instance = target.validate_row(instance)
    groups = target.encoder.groups
    m = len(groups)
    ci = target.class_index(target_class)
    bg = _background_rows(target, background)
    value = _coalition_value_fn(target, instance, bg, ci)

    if mode == "exact":
        if m > EXACT_LIMIT:
            raise TooManyFeaturesForExact(
                f"{m} feature columns exceed the exact-mode limit of {EXACT_LIMIT}"
            )
        phi = _exact_shapley(value, m)
    elif mode == "sampled":
        phi = _sampled_shapley(value, m, samples, seed)
    else:
        raise InvalidConfig(f"unknown SHAP mode '{mode}'")

    return Attribution(
        values={group.column: float(phi[gi]) for gi, group in enumerate(groups)},
        base_value=float(value(0)),
        prediction=float(value((1 << m) - 1)),
        method="shap",
    )
