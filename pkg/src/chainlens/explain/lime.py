"""Local surrogate attributions via perturbation and weighted ridge regression.

Numeric features are perturbed with unit gaussian noise in standardized
space; categorical features are resampled uniformly with probability 0.3.
Samples are weighted by an RBF kernel on their encoded-space distance to the
instance, and a ridge model (lambda = 1e-3) is fit on the target-class
probability. The ridge coefficients are the attributions, one per original
column.
"""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..data import NUMERIC
from .common import Attribution, PredictTarget

RIDGE_LAMBDA = 1e-3
CATEGORICAL_FLIP_PROB = 0.3


def explain_lime(
    target: PredictTarget,
    instance: Mapping[str, Any],
    n_samples: int = 2000,
    kernel_width: float | None = None,
    seed: int = 0,
    target_class: str | None = None,
) -> Attribution:
    instance = target.validate_row(instance)
    enc = target.encoder
    groups = enc.groups
    ci = target.class_index(target_class)
    x0 = enc.encode_row(instance)
    if kernel_width is None:
        kernel_width = 0.75 * np.sqrt(max(enc.n_features, 1))
    rng = np.random.default_rng(seed)

    design = np.zeros((n_samples, len(groups)))
    weights = np.zeros(n_samples)
    y = np.zeros(n_samples)
    for s in range(n_samples):
        row = dict(instance)
        for gi, group in enumerate(groups):
            if group.kind == NUMERIC:
                z0 = (instance[group.column] - enc.means[group.column]) / enc.stds[group.column]
                z = z0 + rng.standard_normal()
                row[group.column] = z * enc.stds[group.column] + enc.means[group.column]
                design[s, gi] = z
            else:
                level = instance[group.column]
                if rng.random() < CATEGORICAL_FLIP_PROB:
                    level = group.levels[rng.integers(len(group.levels))]
                row[group.column] = level
                design[s, gi] = 1.0 if level == instance[group.column] else 0.0
        distance = float(np.linalg.norm(enc.encode_row(row) - x0))
        weights[s] = np.exp(-(distance**2) / (kernel_width**2))
        y[s] = target.proba(row)[ci]

    A = np.hstack([np.ones((n_samples, 1)), design])
    AW = A * weights[:, None]
    regularizer = RIDGE_LAMBDA * np.eye(A.shape[1])
    regularizer[0, 0] = 0.0  # intercept unpenalized
    beta = np.linalg.solve(A.T @ AW + regularizer, A.T @ (weights * y))

    values = {group.column: float(beta[1 + gi]) for gi, group in enumerate(groups)}
    return Attribution(
        values=values,
        base_value=float(beta[0]),
        prediction=float(target.proba(instance)[ci]),
        method="lime",
    )
