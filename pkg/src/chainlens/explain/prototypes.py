"""Prototype and criticism selection by greedy kernel-mean matching.

Prototypes greedily maximize how well the selected subset's kernel mean
matches the dataset's kernel mean (RBF kernel on encoded rows). Criticisms
then greedily maximize the absolute witness function (where the data and
the prototypes disagree most) with a log-determinant regularizer for
diversity. Ties always resolve to the lowest row index.
"""

from __future__ import annotations

import numpy as np

from ..data import Dataset, EncodedMatrix, encode
from ..errors import KTooLarge
from .common import PrototypeSet


def rbf_kernel(X: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = np.sum(X**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth**2))


def median_bandwidth(X: np.ndarray) -> float:
    n = len(X)
    if n < 2:
        return 1.0
    sq = np.sum(X**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    dists = np.sqrt(np.maximum(d2[np.triu_indices(n, k=1)], 0.0))
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def _mmd_gain(K: np.ndarray, colmeans: np.ndarray, selected: list[int], candidate: int) -> float:
    """Objective value of ``selected + [candidate]`` (larger is better)."""
    subset = selected + [candidate]
    size = len(subset)
    cross = colmeans[subset].sum()
    inner = K[np.ix_(subset, subset)].sum()
    return (2.0 / size) * cross - inner / (size * size)


def select_prototypes(K: np.ndarray, k: int) -> list[int]:
    n = K.shape[0]
    colmeans = K.mean(axis=0)
    selected: list[int] = []
    for _ in range(k):
        best_idx = -1
        best_val = -np.inf
        for candidate in range(n):
            if candidate in selected:
                continue
            val = _mmd_gain(K, colmeans, selected, candidate)
            if val > best_val + 1e-12:  # strict improvement: ties keep lowest index
                best_val = val
                best_idx = candidate
        selected.append(best_idx)
    return selected


def witness(K: np.ndarray, prototypes: list[int]) -> np.ndarray:
    return K.mean(axis=0) - K[:, prototypes].mean(axis=1)


def select_criticisms(K: np.ndarray, prototypes: list[int], k: int, regularize: bool = True) -> list[int]:
    n = K.shape[0]
    w = np.abs(witness(K, prototypes))
    chosen: list[int] = []
    taken = set(prototypes)
    for _ in range(k):
        best_idx = -1
        best_val = -np.inf
        base_logdet = _logdet(K, chosen) if regularize and chosen else 0.0
        for candidate in range(n):
            if candidate in taken or candidate in chosen:
                continue
            val = float(w[candidate])
            if regularize:
                val += _logdet(K, chosen + [candidate]) - base_logdet
            if val > best_val + 1e-12:
                best_val = val
                best_idx = candidate
        if best_idx < 0:
            break
        chosen.append(best_idx)
    return chosen


def _logdet(K: np.ndarray, subset: list[int]) -> float:
    if not subset:
        return 0.0
    sub = K[np.ix_(subset, subset)] + 1e-10 * np.eye(len(subset))
    sign, value = np.linalg.slogdet(sub)
    return float(value) if sign > 0 else -1e18


def explain_prototypes(
    dataset: Dataset,
    k_prototypes: int,
    k_criticisms: int = 0,
    bandwidth: float | None = None,
    encoder: EncodedMatrix | None = None,
) -> PrototypeSet:
    enc = encoder if encoder is not None else encode(dataset)
    X = enc.matrix
    n = len(X)
    if k_prototypes + k_criticisms > n:
        raise KTooLarge(
            f"k_prototypes + k_criticisms = {k_prototypes + k_criticisms} exceeds {n} rows"
        )
    bw = bandwidth if bandwidth is not None else median_bandwidth(X)
    K = rbf_kernel(X, bw)
    protos = select_prototypes(K, k_prototypes)
    critics = select_criticisms(K, protos, k_criticisms) if k_criticisms else []
    return PrototypeSet(prototypes=protos, criticisms=critics, kernel_bandwidth=bw)
