"""Similar training examples, ranked by distance in model representation space."""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..data import Dataset, EncodedMatrix, encode
from ..errors import KTooLarge
from ..models import Model, predict_proba, representation
from .common import RankedExamples


def explain_examples(
    dataset: Dataset,
    model: Model,
    instance: Mapping[str, Any],
    k: int,
    encoder: EncodedMatrix | None = None,
) -> RankedExamples:
    """Rank training rows by similarity 1/(1+d) to the instance, where d is
    euclidean distance between model representations (hidden activations for
    an MLP, the encoded row otherwise). Ties keep the lowest row index."""
    if k > len(dataset.rows):
        raise KTooLarge(f"k={k} exceeds {len(dataset.rows)} rows")
    enc = encoder if encoder is not None else encode(dataset)
    clean = dataset.validate_feature_row(instance)
    anchor = representation(model, enc.encode_row(clean))

    distances = np.zeros(len(dataset.rows))
    vectors = []
    for i in range(len(dataset.rows)):
        row = dataset.row_as_dict(i, include_target=False)
        vec = enc.encode_row(row)
        vectors.append(vec)
        distances[i] = float(np.linalg.norm(representation(model, vec) - anchor))
    order = np.argsort(distances, kind="stable")[:k]

    entries = []
    for i in order:
        probs = predict_proba(model, vectors[i])
        label_index = int(np.argmax(probs))
        entries.append(
            {
                "row_index": int(i),
                "similarity": float(1.0 / (1.0 + distances[i])),
                "label": model.classes[label_index],
                "probability": float(probs[label_index]),
                "values": dataset.row_as_dict(int(i), include_target=False),
            }
        )
    return RankedExamples(entries)
