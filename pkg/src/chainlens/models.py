"""Trainable tabular classifiers: softmax regression, CART tree, one-hidden-layer MLP.

All three train deterministically from a seed and expose calibrated-ish
probability vectors over the target column's declared levels. They are
desk-scale implementations meant to be inspected, explained, and perturbed,
not to win benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .data import Dataset, EncodedMatrix, encode
from .errors import DimensionMismatch, InvalidConfig, SingleClassDataset

MODEL_KINDS = ("logistic", "tree", "mlp")


@dataclass
class TrainConfig:
    seed: int = 0
    learning_rate: float | None = None
    epochs: int | None = None
    hidden_width: int = 8
    max_depth: int = 4
    l2: float = 0.0

    def resolved(self, kind: str) -> "TrainConfig":
        lr = self.learning_rate if self.learning_rate is not None else (0.1 if kind == "mlp" else 0.5)
        epochs = self.epochs if self.epochs is not None else (500 if kind == "mlp" else 400)
        return TrainConfig(self.seed, lr, epochs, self.hidden_width, self.max_depth, self.l2)


@dataclass
class LogisticModel:
    classes: tuple[str, ...]
    weights: np.ndarray  # (d, k)
    bias: np.ndarray  # (k,)

    kind = "logistic"

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    probs: np.ndarray | None = None  # leaf only
    counts: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class TreeModel:
    classes: tuple[str, ...]
    root: TreeNode
    n_features: int
    #: exact-match prediction overrides installed by the bias injector,
    #: keyed on the encoded input vector
    overrides: list[tuple[tuple[float, ...], str]] = field(default_factory=list)

    kind = "tree"


@dataclass
class MLPModel:
    classes: tuple[str, ...]
    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, k)
    b2: np.ndarray  # (k,)

    kind = "mlp"

    @property
    def n_features(self) -> int:
        return int(self.w1.shape[0])


Model = LogisticModel | TreeModel | MLPModel


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _labels_to_indices(labels: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    return np.asarray([index[v] for v in labels], dtype=int)


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


# --- differentiable objectives (also used by the gradient-check tests) -------


def logistic_objective(
    X: np.ndarray, Y: np.ndarray, l2: float = 0.0
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Mean cross-entropy of softmax regression as a function of flat params.

    Flat layout: weights (d*k) then bias (k). Returns (loss, gradient).
    """
    n, d = X.shape
    k = Y.shape[1]

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        W = flat[: d * k].reshape(d, k)
        b = flat[d * k :]
        P = _softmax(X @ W + b)
        loss = -float(np.mean(np.sum(Y * np.log(P + 1e-12), axis=1))) + 0.5 * l2 * float(np.sum(W * W))
        dZ = (P - Y) / n
        dW = X.T @ dZ + l2 * W
        db = dZ.sum(axis=0)
        return loss, np.concatenate([dW.ravel(), db])

    return objective


def mlp_objective(
    X: np.ndarray, Y: np.ndarray, hidden: int
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Mean cross-entropy of a tanh-hidden-layer softmax network.

    Flat layout: w1 (d*h), b1 (h), w2 (h*k), b2 (k).
    """
    n, d = X.shape
    k = Y.shape[1]
    h = hidden

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        ofs = 0
        w1 = flat[ofs : ofs + d * h].reshape(d, h); ofs += d * h
        b1 = flat[ofs : ofs + h]; ofs += h
        w2 = flat[ofs : ofs + h * k].reshape(h, k); ofs += h * k
        b2 = flat[ofs : ofs + k]
        Z = np.tanh(X @ w1 + b1)
        P = _softmax(Z @ w2 + b2)
        loss = -float(np.mean(np.sum(Y * np.log(P + 1e-12), axis=1)))
        dOut = (P - Y) / n
        dW2 = Z.T @ dOut
        dB2 = dOut.sum(axis=0)
        dZ = (dOut @ w2.T) * (1.0 - Z * Z)
        dW1 = X.T @ dZ
        dB1 = dZ.sum(axis=0)
        return loss, np.concatenate([dW1.ravel(), dB1, dW2.ravel(), dB2])

    return objective


# --- training -----------------------------------------------------------------


def _train_logistic(X: np.ndarray, y: np.ndarray, classes: tuple[str, ...], cfg: TrainConfig) -> LogisticModel:
    d, k = X.shape[1], len(classes)
    Y = _one_hot(y, k)
    flat = np.zeros(d * k + k)
    obj = logistic_objective(X, Y, cfg.l2)
    for _ in range(cfg.epochs):
        _, grad = obj(flat)
        flat = flat - cfg.learning_rate * grad
    return LogisticModel(classes, flat[: d * k].reshape(d, k).copy(), flat[d * k :].copy())


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _build_tree(X: np.ndarray, y: np.ndarray, k: int, depth: int, max_depth: int) -> TreeNode:
    counts = np.bincount(y, minlength=k).astype(float)
    node = TreeNode(counts=counts, probs=counts / counts.sum())
    if depth >= max_depth or _gini(counts) == 0.0:
        return node
    n = len(y)
    parent_gini = _gini(counts)
    best: tuple[float, int, float] | None = None  # (gain, feature, threshold)
    for j in range(X.shape[1]):
        col = X[:, j]
        values = np.unique(col)
        if len(values) < 2:
            continue
        thresholds = (values[:-1] + values[1:]) / 2.0
        for t in thresholds:
            mask = col <= t
            nl = int(mask.sum())
            if nl == 0 or nl == n:
                continue
            cl = np.bincount(y[mask], minlength=k).astype(float)
            cr = counts - cl
            gain = parent_gini - (nl * _gini(cl) + (n - nl) * _gini(cr)) / n
            # strict improvement required to replace, so ties resolve to the
            # lowest feature index and lowest threshold
            if best is None or gain > best[0] + 1e-12:
                best = (gain, j, float(t))
    if best is None:
        return node
    _, j, t = best
    mask = X[:, j] <= t
    node.feature = j
    node.threshold = t
    node.probs = None
    node.left = _build_tree(X[mask], y[mask], k, depth + 1, max_depth)
    node.right = _build_tree(X[~mask], y[~mask], k, depth + 1, max_depth)
    return node


def _train_tree(X: np.ndarray, y: np.ndarray, classes: tuple[str, ...], cfg: TrainConfig) -> TreeModel:
    root = _build_tree(X, y, len(classes), 0, cfg.max_depth)
    return TreeModel(classes, root, X.shape[1])


def _train_mlp(X: np.ndarray, y: np.ndarray, classes: tuple[str, ...], cfg: TrainConfig) -> MLPModel:
    rng = np.random.default_rng(cfg.seed)
    d, k, h = X.shape[1], len(classes), cfg.hidden_width
    Y = _one_hot(y, k)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(max(d, 1)), size=(d, h))
    b1 = np.zeros(h)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, k))
    b2 = np.zeros(k)
    flat = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
    obj = mlp_objective(X, Y, h)
    for _ in range(cfg.epochs):
        _, grad = obj(flat)
        flat = flat - cfg.learning_rate * grad
    ofs = 0
    w1 = flat[ofs : ofs + d * h].reshape(d, h).copy(); ofs += d * h
    b1 = flat[ofs : ofs + h].copy(); ofs += h
    w2 = flat[ofs : ofs + h * k].reshape(h, k).copy(); ofs += h * k
    b2 = flat[ofs:].copy()
    return MLPModel(classes, w1, b1, w2, b2)


def train(
    kind: str,
    dataset: Dataset,
    config: TrainConfig | None = None,
    *,
    encoded: EncodedMatrix | None = None,
) -> Model:
    """Train a model of ``kind`` on the dataset's encoded features.

    Deterministic for a fixed config seed. ``encoded`` may be passed to reuse
    an existing encoding (it must come from the same dataset).
    """
    if kind not in MODEL_KINDS:
        raise InvalidConfig(f"unknown model kind '{kind}'")
    cfg = (config or TrainConfig()).resolved(kind)
    enc = encoded if encoded is not None else encode(dataset)
    classes = dataset.target_column.levels
    labels = dataset.labels()
    if len(set(labels)) < 2:
        raise SingleClassDataset("training requires at least two distinct target labels")
    X = enc.matrix
    y = _labels_to_indices(labels, classes)
    if kind == "logistic":
        return _train_logistic(X, y, classes, cfg)
    if kind == "tree":
        return _train_tree(X, y, classes, cfg)
    return _train_mlp(X, y, classes, cfg)


# --- inference ------------------------------------------------------------------


def _check_row(model: Model, row: Sequence[float]) -> np.ndarray:
    vec = np.asarray(row, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != model.n_features:
        raise DimensionMismatch(
            f"expected row of length {model.n_features}, got shape {vec.shape}"
        )
    return vec


def _tree_leaf(root: TreeNode, vec: np.ndarray) -> TreeNode:
    node = root
    while not node.is_leaf:
        node = node.left if vec[node.feature] <= node.threshold else node.right
    return node


def predict_proba(model: Model, row: Sequence[float]) -> np.ndarray:
    """Probability vector over ``model.classes`` for one encoded row."""
    vec = _check_row(model, row)
    if isinstance(model, LogisticModel):
        return _softmax(vec @ model.weights + model.bias)
    if isinstance(model, TreeModel):
        for key, label in model.overrides:
            if len(key) == len(vec) and np.allclose(vec, key, rtol=0.0, atol=0.0):
                out = np.zeros(len(model.classes))
                out[model.classes.index(label)] = 1.0
                return out
        return _tree_leaf(model.root, vec).probs.copy()
    z = np.tanh(vec @ model.w1 + model.b1)
    return _softmax(z @ model.w2 + model.b2)


def predict_proba_matrix(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if isinstance(model, LogisticModel):
        return _softmax(X @ model.weights + model.bias)
    if isinstance(model, MLPModel):
        return _softmax(np.tanh(X @ model.w1 + model.b1) @ model.w2 + model.b2)
    return np.vstack([predict_proba(model, row) for row in X])


def predict_label(model: Model, row: Sequence[float]) -> str:
    probs = predict_proba(model, row)
    return model.classes[int(np.argmax(probs))]


def representation(model: Model, row: Sequence[float]) -> np.ndarray:
    """Model representation of a row: the hidden activations for an MLP,
    the encoded input itself for logistic and tree models."""
    vec = _check_row(model, row)
    if isinstance(model, MLPModel):
        return np.tanh(vec @ model.w1 + model.b1)
    return vec.copy()


def training_accuracy(model: Model, X: np.ndarray, labels: Sequence[str]) -> float:
    probs = predict_proba_matrix(model, X)
    predicted = [model.classes[i] for i in probs.argmax(axis=1)]
    return float(np.mean([p == t for p, t in zip(predicted, labels)]))


# --- structure dumps and persistence ---------------------------------------------


def _tree_node_to_dict(node: TreeNode, feature_names: Sequence[str] | None) -> dict:
    if node.is_leaf:
        return {"leaf": True, "probs": [float(p) for p in node.probs], "counts": [float(c) for c in node.counts]}
    name = feature_names[node.feature] if feature_names else str(node.feature)
    return {
        "leaf": False,
        "feature": name,
        "feature_index": int(node.feature),
        "threshold": float(node.threshold),
        "left": _tree_node_to_dict(node.left, feature_names),
        "right": _tree_node_to_dict(node.right, feature_names),
    }


def describe(model: Model, feature_names: Sequence[str] | None = None) -> dict:
    """Human/agent-readable structure of a model's parameters."""
    if isinstance(model, LogisticModel):
        return {
            "kind": model.kind,
            "classes": list(model.classes),
            "weights": model.weights.tolist(),
            "bias": model.bias.tolist(),
            "feature_names": list(feature_names) if feature_names else None,
        }
    if isinstance(model, TreeModel):
        return {
            "kind": model.kind,
            "classes": list(model.classes),
            "tree": _tree_node_to_dict(model.root, feature_names),
            "overrides": len(model.overrides),
        }
    return {
        "kind": model.kind,
        "classes": list(model.classes),
        "hidden_width": int(model.w1.shape[1]),
        "layers": ["tanh", "softmax"],
        "feature_names": list(feature_names) if feature_names else None,
    }


def _tree_node_from_dict(doc: Mapping[str, Any]) -> TreeNode:
    if doc["leaf"]:
        return TreeNode(probs=np.asarray(doc["probs"], dtype=float), counts=np.asarray(doc["counts"], dtype=float))
    return TreeNode(
        feature=int(doc["feature_index"]),
        threshold=float(doc["threshold"]),
        left=_tree_node_from_dict(doc["left"]),
        right=_tree_node_from_dict(doc["right"]),
    )


def model_to_dict(model: Model) -> dict:
    if isinstance(model, LogisticModel):
        return {
            "kind": "logistic",
            "classes": list(model.classes),
            "weights": model.weights.tolist(),
            "bias": model.bias.tolist(),
        }
    if isinstance(model, TreeModel):
        return {
            "kind": "tree",
            "classes": list(model.classes),
            "n_features": model.n_features,
            "root": _tree_node_to_dict(model.root, None),
            "overrides": [{"key": list(k), "label": lbl} for k, lbl in model.overrides],
        }
    return {
        "kind": "mlp",
        "classes": list(model.classes),
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2.tolist(),
    }


def model_from_dict(doc: Mapping[str, Any]) -> Model:
    kind = doc["kind"]
    classes = tuple(doc["classes"])
    if kind == "logistic":
        return LogisticModel(classes, np.asarray(doc["weights"], dtype=float), np.asarray(doc["bias"], dtype=float))
    if kind == "tree":
        model = TreeModel(classes, _tree_node_from_dict(doc["root"]), int(doc["n_features"]))
        model.overrides = [(tuple(o["key"]), o["label"]) for o in doc.get("overrides", [])]
        return model
    if kind == "mlp":
        return MLPModel(
            classes,
            np.asarray(doc["w1"], dtype=float),
            np.asarray(doc["b1"], dtype=float),
            np.asarray(doc["w2"], dtype=float),
            np.asarray(doc["b2"], dtype=float),
        )
    raise InvalidConfig(f"unknown model kind '{kind}'")
