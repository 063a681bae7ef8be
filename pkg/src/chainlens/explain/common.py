"""Shared plumbing for the explanation operations: explanation result types
and the adapter that turns a pipeline (or one of its blocks) into a plain
row-in, probabilities-out function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from ..data import ColumnSchema, Dataset, EncodedMatrix
from ..errors import RejectedByFilter, TargetNotPredictive, UnknownLabel
from ..pipeline import Block, Pipeline, flatten


@dataclass
class Attribution:
    """Per-feature contribution scores for one prediction."""

    values: dict[str, float]
    base_value: float
    prediction: float
    method: str  # "lime" | "shap"

    def to_payload(self) -> dict:
        return {
            "method": self.method,
            "base_value": self.base_value,
            "prediction": self.prediction,
            "values": {k: float(v) for k, v in self.values.items()},
        }


@dataclass
class Counterfactual:
    original: dict
    modified: dict
    changed: list[str]
    predicted_label: str
    distance: float

    def to_payload(self) -> dict:
        return {
            "original": self.original,
            "modified": self.modified,
            "changed": list(self.changed),
            "predicted_label": self.predicted_label,
            "distance": self.distance,
        }


@dataclass
class CounterfactualSearchResult:
    counterfactuals: list[Counterfactual]
    diagnostic: str | None = None

    def to_payload(self) -> dict:
        return {
            "counterfactuals": [c.to_payload() for c in self.counterfactuals],
            "diagnostic": self.diagnostic,
        }


@dataclass
class PrototypeSet:
    prototypes: list[int]
    criticisms: list[int]
    kernel_bandwidth: float

    def to_payload(self) -> dict:
        return {
            "prototypes": list(self.prototypes),
            "criticisms": list(self.criticisms),
            "kernel_bandwidth": self.kernel_bandwidth,
        }


@dataclass
class RankedExamples:
    entries: list[dict]  # row_index, similarity, label, probability, values

    def to_payload(self) -> dict:
        return {"entries": self.entries}


@dataclass
class WhatIfResult:
    row: dict
    decision: dict | None
    rejected: bool = False
    message: str | None = None
    events: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "row": self.row,
            "decision": self.decision,
            "rejected": self.rejected,
            "message": self.message,
            "events": self.events,
        }


@dataclass
class PredictTarget:
    """What every explainer works against: a feature schema, an encoder, the
    class labels, and a function producing a decision record for a row.

    ``predict_events`` additionally returns the control events the call
    fired, when the target is backed by a live pipeline.
    """

    name: str
    columns: list[ColumnSchema]
    encoder: EncodedMatrix
    classes: tuple[str, ...]
    predict_record: Callable[[Mapping[str, Any]], dict]
    predict_events: Callable[[Mapping[str, Any]], tuple[dict, list[dict]]] | None = None
    dataset: Dataset | None = None
    pipeline: Pipeline | None = None

    def proba(self, row: Mapping[str, Any]) -> np.ndarray:
        """Class probabilities; a filter rejection counts as zero probability
        everywhere (the system produces no decision for that input)."""
        try:
            record = self.predict_record(dict(row))
        except RejectedByFilter:
            return np.zeros(len(self.classes))
        return np.asarray(record["probabilities"], dtype=float)

    def proba_and_events(self, row: Mapping[str, Any]) -> tuple[np.ndarray, list[dict]]:
        if self.predict_events is None:
            return self.proba(row), []
        try:
            record, events = self.predict_events(dict(row))
        except RejectedByFilter:
            return np.zeros(len(self.classes)), []
        return np.asarray(record["probabilities"], dtype=float), events

    def class_index(self, label: str | None = None) -> int:
        """Default attribution/counterfactual target is the positive class
        (index 1)."""
        if label is None:
            return 1 if len(self.classes) > 1 else 0
        if label not in self.classes:
            raise UnknownLabel(f"label '{label}' is not one of {list(self.classes)}")
        return self.classes.index(label)

    def validate_row(self, row: Mapping[str, Any]) -> dict[str, Any]:
        if self.dataset is not None:
            return self.dataset.validate_feature_row(row)
        out = {}
        for col in self.columns:
            out[col.name] = col.validate_value(row[col.name]) if col.name in row else None
        return out


def target_from_pipeline(pipeline: Pipeline, spec: str = "chain") -> PredictTarget:
    """Resolve an explanation target: the whole chain or a single block id."""
    from ..blocks import find_dataset_block, find_model_blocks

    dataset_block = find_dataset_block(pipeline)
    if dataset_block is None:
        raise TargetNotPredictive("pipeline has no dataset block; explainers need a schema")
    dataset = dataset_block.dataset

    if spec in ("chain", "", None):
        node = pipeline.root
        if not any(h.predict_method for h in flatten(node)):
            raise TargetNotPredictive("chain contains no predict-capable block")
        name = "chain"
    else:
        handle = pipeline.registry.get(spec)
        if handle.predict_method is None:
            raise TargetNotPredictive(f"block '{spec}' has no predict method")
        node = Block(handle)
        name = spec

    models = find_model_blocks(pipeline)
    for model_block in models:
        model_block.ensure_trained()
    encoder = None
    if name != "chain":
        owner = pipeline.registry.get(spec).owner
        if hasattr(owner, "encoder"):
            encoder = owner.encoder
    if encoder is None:
        encoder = models[0].encoder if models else None
    if encoder is None:
        from ..data import encode

        encoder = encode(dataset)

    def predict_record(row: Mapping[str, Any]) -> dict:
        value, _ = pipeline.predict(dict(row), node=node)
        if not isinstance(value.payload, dict) or "probabilities" not in value.payload:
            raise TargetNotPredictive(f"target '{name}' did not produce a decision record")
        return value.payload

    def predict_events(row: Mapping[str, Any]) -> tuple[dict, list[dict]]:
        value, trace = pipeline.predict(dict(row), node=node)
        if not isinstance(value.payload, dict) or "probabilities" not in value.payload:
            raise TargetNotPredictive(f"target '{name}' did not produce a decision record")
        return value.payload, trace.events

    return PredictTarget(
        name=name,
        columns=dataset.feature_columns,
        encoder=encoder,
        classes=dataset.target_column.levels,
        predict_record=predict_record,
        predict_events=predict_events,
        dataset=dataset,
        pipeline=pipeline,
    )


def target_from_model(dataset: Dataset, model, encoder: EncodedMatrix | None = None) -> PredictTarget:
    """Wrap a bare model (no pipeline) as an explanation target."""
    from ..data import encode
    from ..models import predict_proba

    enc = encoder if encoder is not None else encode(dataset)

    def predict_record(row: Mapping[str, Any]) -> dict:
        clean = dataset.validate_feature_row(row)
        probs = predict_proba(model, enc.encode_row(clean))
        label = model.classes[int(np.argmax(probs))]
        return {
            "label": label,
            "probabilities": [float(p) for p in probs],
            "classes": list(model.classes),
            "input": clean,
        }

    return PredictTarget(
        name="model",
        columns=dataset.feature_columns,
        encoder=enc,
        classes=tuple(model.classes),
        predict_record=predict_record,
        dataset=dataset,
    )
