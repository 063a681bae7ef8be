"""Structural building blocks: dataset, models, and the control blocks
(splitter, aggregator, rule guard, input filter, shutdown trigger, bias
injector, logic bomb).

Each adapter registers a block whose Predict/Transform method implements the
runtime behavior and whose CRUD methods expose its configuration to the API
and to agents.
"""

from __future__ import annotations

import copy
import time
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import jsonutil
from .data import NUMERIC, Dataset, EncodedMatrix, encode
from .errors import (
    ArityMismatch,
    EmptyOutputs,
    InvalidConfig,
    NoBranchMatched,
    NoPendingCorrections,
    RejectedByFilter,
    SchemaMismatch,
    TypeMismatch,
    UnknownLabel,
)
from .models import (
    Model,
    MLPModel,
    TrainConfig,
    TreeModel,
    describe,
    logistic_objective,
    model_to_dict,
    predict_proba,
    train,
)
from .pipeline import (
    MethodRole,
    Param,
    Pipeline,
    Registry,
    RoutingPlan,
    ShutdownState,
    emit_event,
    method,
)
from .rules import (
    Action,
    BindContext,
    EvalContext,
    Expr,
    Override,
    Reject,
    Reset,
    RuleAst,
    Shutdown,
    bind_condition,
    bind_rule,
    evaluate,
    evaluate_condition,
    format_condition,
    format_rule,
    parse_condition,
    parse_rule,
    references_attribution,
)

AUDIT_CAP = 10_000

#: set while a logic bomb computes its own on-demand attributions, so the
#: nested prediction does not re-trigger bomb monitoring
_IN_BOMB_EVAL: ContextVar[bool] = ContextVar("chainlens_in_bomb_eval", default=False)


class AuditLog:
    """Append-only ring of fired control events, capped at AUDIT_CAP."""

    def __init__(self) -> None:
        self.entries: list[dict] = []

    def append(self, record: dict) -> None:
        self.entries.append({"ts": time.time(), **record})
        if len(self.entries) > AUDIT_CAP:
            del self.entries[: len(self.entries) - AUDIT_CAP]

    def lines(self) -> str:
        return "\n".join(jsonutil.dumps(e) for e in self.entries)


@dataclass
class RuleEntry:
    ast: RuleAst
    active: bool = True

    def to_payload(self) -> dict:
        return {"text": format_rule(self.ast), "active": self.active}


@dataclass
class RuleSet:
    """Ordered rule list shared by guard, filter, and bomb blocks."""

    rules: list[RuleEntry] = field(default_factory=list)
    audit: AuditLog = field(default_factory=AuditLog)

    def to_payload(self) -> list[dict]:
        return [r.to_payload() for r in self.rules]


GuardState = RuleSet
FilterState = RuleSet
BombState = RuleSet


def _decision_ctx(input_row: Mapping[str, Any], record: Mapping[str, Any],
                  attribution: Mapping[str, float] | None = None) -> EvalContext:
    label = record.get("label")
    probs = record.get("probabilities") or []
    classes = record.get("classes") or []
    probability = None
    if label in classes:
        probability = float(probs[classes.index(label)])
    elif probs:
        probability = float(max(probs))
    return EvalContext(
        input=dict(input_row),
        output={"label": label, "probability": probability},
        attribution=attribution,
    )


# --- rule-bearing block base ---------------------------------------------------------


class _RuleBlock:
    """Shared CRUD surface for blocks configured through rule lists."""

    allowed_actions: tuple[type, ...] = (Override, Reject, Shutdown, Reset)
    attribution_allowed = False

    def __init__(self, rules: Sequence[str] = (), bind_context: BindContext | None = None):
        self.state = RuleSet()
        self.pipeline: Pipeline | None = None
        self._bind_context = bind_context
        self._pending_texts = list(rules)
        if bind_context is not None:
            for text in self._pending_texts:
                self.add_rule(text)
            self._pending_texts = []

    def bind_to_pipeline(self, pipeline: Pipeline) -> None:
        self.pipeline = pipeline
        if self._bind_context is None:
            self._bind_context = pipeline_bind_context(
                pipeline, self.allowed_actions, self.attribution_allowed
            )
        for text in self._pending_texts:
            self.add_rule(text)
        self._pending_texts = []
        # re-validate anything added before binding
        for entry in self.state.rules:
            bind_rule(entry.ast, self._bind_context)

    def add_rule(self, rule: str) -> dict:
        ast = parse_rule(rule)
        if self._bind_context is not None:
            bind_rule(ast, self._bind_context)
        self.state.rules.append(RuleEntry(ast))
        return {"index": len(self.state.rules) - 1, "rule": format_rule(ast), "active": True}

    def list_rules(self) -> list[dict]:
        return self.state.to_payload()

    def set_rule_active(self, index: int, active: bool) -> dict:
        self._check_index(index)
        self.state.rules[index].active = active
        return self.state.rules[index].to_payload()

    def delete_rule(self, index: int) -> dict:
        self._check_index(index)
        del self.state.rules[index]
        return {"ok": True, "rules": len(self.state.rules)}

    def audit_lines(self) -> str:
        return self.state.audit.lines()

    def _check_index(self, index: int) -> None:
        if not 0 <= index < len(self.state.rules):
            from .errors import IndexOutOfRange

            raise IndexOutOfRange(f"rule index {index} out of range")

    def _rule_methods(self) -> list:
        return [
            method("add_rule", MethodRole.CREATE, self.add_rule,
                   [Param("rule", "text")], "structure",
                   "Add a rule in the WHEN ... THEN ... language."),
            method("rules", MethodRole.READ, self.list_rules, [], "table",
                   "List configured rules with their activation state."),
            method("set_rule_active", MethodRole.UPDATE, self.set_rule_active,
                   [Param("index", "integer"), Param("active", "boolean")], "structure",
                   "Activate or deactivate a rule by index."),
            method("delete_rule", MethodRole.DELETE, self.delete_rule,
                   [Param("index", "integer")], "structure", "Delete a rule by index."),
            method("audit", MethodRole.READ, self.audit_lines, [], "text",
                   "Fired-event audit log, one JSON record per line."),
        ]

    def state_items(self) -> dict:
        return {"rules": self.state.to_payload()}


def pipeline_bind_context(
    pipeline: Pipeline, allowed_actions: tuple[type, ...], attribution_allowed: bool = False
) -> BindContext:
    dataset_block = find_dataset_block(pipeline)
    input_fields: dict[str, str] = {}
    classes: tuple[str, ...] = ()
    attribution_fields: tuple[str, ...] = ()
    if dataset_block is not None:
        ds = dataset_block.dataset
        input_fields = {
            c.name: ("number" if c.kind == NUMERIC else "text") for c in ds.feature_columns
        }
        classes = ds.target_column.levels
        attribution_fields = tuple(c.name for c in ds.feature_columns)
    return BindContext(
        input_fields=input_fields,
        classes=classes,
        attribution_allowed=attribution_allowed,
        attribution_fields=attribution_fields,
        allowed_actions=allowed_actions,
    )


def find_dataset_block(pipeline: Pipeline) -> "DatasetBlock | None":
    for owner in pipeline.owners():
        if isinstance(owner, DatasetBlock):
            return owner
    return None


def find_model_blocks(pipeline: Pipeline) -> list["ModelBlock"]:
    return [o for o in pipeline.owners() if isinstance(o, ModelBlock)]


# --- dataset block ----------------------------------------------------------------------


class DatasetBlock:
    """Exposes a tabular dataset with CRUD edit methods; edits trigger
    downstream update propagation through the pipeline wrapper."""

    def __init__(self, dataset: Dataset, registry: Registry, *, block_id: str = "dataset",
                 display_name: str | None = None):
        self.dataset = dataset
        self.handle = registry.register_block(
            display_name or "Dataset",
            "dataset",
            [
                method("get_rows", MethodRole.READ, self.get_rows,
                       [Param("offset", "integer", required=False, default=0),
                        Param("limit", "integer", required=False, default=0)],
                       "table", "Fetch rows, optionally windowed by offset/limit."),
                method("get_schema", MethodRole.READ, self.get_schema, [], "structure",
                       "Column schema: names, kinds, levels, target."),
                method("add_row", MethodRole.CREATE, self.add_row,
                       [Param("values", "row")], "structure", "Append a schema-valid row."),
                method("update_cell", MethodRole.UPDATE, self.update_cell,
                       [Param("row", "integer"), Param("column", "text"), Param("value", "text")],
                       "structure", "Set one cell; numeric cells parse from text."),
                method("delete_row", MethodRole.DELETE, self.delete_row,
                       [Param("row", "integer")], "structure", "Delete a row by index."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    def get_rows(self, offset: int = 0, limit: int = 0) -> list[dict]:
        rows = [self.dataset.row_as_dict(i) for i in range(len(self.dataset.rows))]
        rows = rows[offset:]
        return rows[:limit] if limit else rows

    def get_schema(self) -> dict:
        return {
            "target": self.dataset.target,
            "columns": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "levels": list(c.levels),
                    "mutable_for_counterfactuals": c.mutable_for_counterfactuals,
                    "protected": c.protected,
                }
                for c in self.dataset.schema
            ],
        }

    def add_row(self, values: Mapping[str, Any]) -> dict:
        self.dataset.add_row(values)
        return {"ok": True, "rows": len(self.dataset.rows)}

    def update_cell(self, row: int, column: str, value: str) -> dict:
        self.dataset.update_cell(row, column, value)
        return {"ok": True, "rows": len(self.dataset.rows)}

    def delete_row(self, row: int) -> dict:
        self.dataset.delete_row(row)
        return {"ok": True, "rows": len(self.dataset.rows)}

    def state_items(self) -> dict:
        return self.dataset.state_items()


# --- model block -------------------------------------------------------------------------


class ModelBlock:
    """A trainable classifier over the pipeline dataset.

    Training is lazy so configs can be validated without paying for it;
    ``retrain`` re-encodes the (possibly edited) dataset, refits with the
    same seed, and refreshes the post-training snapshot the logic bomb's
    Reset action restores.
    """

    def __init__(
        self,
        dataset: Dataset,
        kind: str,
        registry: Registry,
        *,
        config: TrainConfig | None = None,
        block_id: str | None = None,
        display_name: str | None = None,
    ):
        self.dataset = dataset
        self.model_kind = kind
        self.config = config or TrainConfig()
        self.model: Model | None = None
        self.encoder: EncodedMatrix | None = None
        self._snapshot: tuple[Model, EncodedMatrix] | None = None
        name = display_name or (block_id or f"{kind}-model")
        self.handle = registry.register_block(
            name,
            "model",
            [
                method("predict", MethodRole.PREDICT, self.predict,
                       [Param("row", "row")], "structure",
                       "Predict the target label for a feature row."),
                method("retrain", MethodRole.UPDATE, self.retrain, [], "structure",
                       "Refit on the current dataset with the configured seed."),
                method("describe", MethodRole.READ, self.describe, [], "structure",
                       "Model parameters; decision trees dump their split structure."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    @property
    def classes(self) -> tuple[str, ...]:
        return self.dataset.target_column.levels

    def ensure_trained(self) -> None:
        if self.model is None:
            self.retrain()

    def retrain(self) -> dict:
        self.encoder = encode(self.dataset)
        self.model = train(self.model_kind, self.dataset, self.config, encoded=self.encoder)
        self.snapshot()
        return {"ok": True, "kind": self.model_kind, "n_rows": len(self.dataset.rows)}

    def predict(self, row: Mapping[str, Any]) -> dict:
        self.ensure_trained()
        try:
            clean = self.dataset.validate_feature_row(row)
            vec = self.encoder.encode_row(clean)
        except SchemaMismatch as exc:
            raise TypeMismatch("predict", exc.column or "row", str(exc)) from None
        probs = predict_proba(self.model, vec)
        label = self.model.classes[int(np.argmax(probs))]
        return {
            "label": label,
            "probabilities": [float(p) for p in probs],
            "classes": list(self.model.classes),
            "input": dict(clean),
        }

    def describe(self) -> dict:
        self.ensure_trained()
        return describe(self.model, self.encoder.feature_names)

    # -- snapshots (logic bomb Reset scope) --

    def snapshot(self) -> None:
        self._snapshot = (copy.deepcopy(self.model), copy.deepcopy(self.encoder))

    def restore_snapshot(self) -> None:
        if self._snapshot is not None:
            self.model = copy.deepcopy(self._snapshot[0])
            self.encoder = copy.deepcopy(self._snapshot[1])

    def state_items(self) -> dict | None:
        return None if self.model is None else model_to_dict(self.model)

    def load_parameters(self, doc: Mapping[str, Any]) -> None:
        from .models import model_from_dict
        from .data import FeatureGroup

        self.model = model_from_dict(doc["model"])
        enc = doc["encoder"]
        self.encoder = EncodedMatrix(
            matrix=np.zeros((0, len(enc["feature_names"]))),
            feature_names=list(enc["feature_names"]),
            groups=[
                FeatureGroup(g["column"], g["kind"], tuple(g["indices"]), tuple(g["levels"]))
                for g in enc["groups"]
            ],
            means=dict(enc["means"]),
            stds=dict(enc["stds"]),
            columns=self.dataset.feature_columns,
        )
        self.snapshot()

    def dump_parameters(self) -> dict:
        self.ensure_trained()
        return {"model": model_to_dict(self.model), "encoder": self.encoder.to_dict()}


# --- splitter -------------------------------------------------------------------------------


@dataclass
class SplitterRoute:
    branch: int
    condition: Expr | None  # None routes unconditionally (ALL)

    def to_payload(self) -> dict:
        return {
            "branch": self.branch,
            "when": "ALL" if self.condition is None else format_condition(self.condition),
        }


@dataclass
class SplitterConfig:
    routes: list[SplitterRoute] = field(default_factory=list)
    default: str = "route_to_all"  # or "reject"


def splitter_route(config: SplitterConfig, input_row: Mapping[str, Any]) -> RoutingPlan:
    """Branches whose condition holds receive the input; an empty match set
    falls back to the default policy."""
    ctx = EvalContext(input=dict(input_row))
    matched: dict[int, Any] = {}
    for route in config.routes:
        if route.condition is None or evaluate_condition(route.condition, ctx):
            matched.setdefault(route.branch, dict(input_row))
    if not matched:
        if config.default == "reject":
            raise NoBranchMatched("no splitter route matched and default policy is reject")
        return RoutingPlan(None, broadcast=dict(input_row))
    return RoutingPlan(matched)


class SplitterBlock(_RuleBlock):
    def __init__(self, registry: Registry, *, block_id: str = "splitter",
                 routes: Sequence[Mapping[str, Any]] = (), default: str = "route_to_all",
                 bind_context: BindContext | None = None, display_name: str | None = None):
        if default not in ("route_to_all", "reject"):
            raise InvalidConfig(f"unknown splitter default policy '{default}'")
        super().__init__((), bind_context)
        self.config = SplitterConfig(default=default)
        self.arity: int | None = None
        self._pending_routes = [dict(r) for r in routes]
        self.handle = registry.register_block(
            display_name or "Splitter",
            "splitter",
            [
                method("route", MethodRole.TRANSFORM, self.route, [Param("row", "row")],
                       "structure", "Compute the routing plan for the next parallel group."),
                method("add_route", MethodRole.CREATE, self.add_route,
                       [Param("branch", "integer"), Param("when", "text")], "structure",
                       "Route rows matching a condition ('ALL' matches everything) to a branch."),
                method("routes", MethodRole.READ, self.list_routes, [], "table",
                       "Configured routes and the default policy."),
                method("set_default", MethodRole.UPDATE, self.set_default,
                       [Param("policy", "text")], "structure",
                       "Default policy when no route matches: route_to_all or reject."),
                method("delete_route", MethodRole.DELETE, self.delete_route,
                       [Param("index", "integer")], "structure", "Delete a route by index."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    def bind_to_pipeline(self, pipeline: Pipeline) -> None:
        self.pipeline = pipeline
        if self._bind_context is None:
            self._bind_context = pipeline_bind_context(pipeline, ())
        from .pipeline import Parallel

        succ = _successor_node(pipeline.root, self.handle.id)
        if not isinstance(succ, Parallel):
            raise InvalidConfig(
                f"splitter '{self.handle.id}' must immediately precede a parallel group"
            )
        self.arity = len(succ.branches)
        for route in self._pending_routes:
            self.add_route(int(route["branch"]), str(route.get("when", "ALL")))
        self._pending_routes = []
        for route in self.config.routes:
            self._check_branch(route.branch)

    def _check_branch(self, branch: int) -> None:
        if branch < 0 or (self.arity is not None and branch >= self.arity):
            raise InvalidConfig(
                f"route branch {branch} out of range for parallel group of arity {self.arity}"
            )

    def route(self, row: Mapping[str, Any]) -> RoutingPlan:
        return splitter_route(self.config, row)

    def add_route(self, branch: int, when: str) -> dict:
        self._check_branch(branch)
        condition = None
        if when.strip().upper() != "ALL":
            condition = parse_condition(when)
            if self._bind_context is not None:
                bind_condition(condition, self._bind_context)
        self.config.routes.append(SplitterRoute(branch, condition))
        return {"index": len(self.config.routes) - 1}

    def list_routes(self) -> list[dict]:
        return [r.to_payload() for r in self.config.routes] + [{"default": self.config.default}]

    def set_default(self, policy: str) -> dict:
        if policy not in ("route_to_all", "reject"):
            raise InvalidConfig(f"unknown splitter default policy '{policy}'")
        self.config.default = policy
        return {"default": policy}

    def delete_route(self, index: int) -> dict:
        if not 0 <= index < len(self.config.routes):
            from .errors import IndexOutOfRange

            raise IndexOutOfRange(f"route index {index} out of range")
        del self.config.routes[index]
        return {"ok": True}

    def state_items(self) -> dict:
        return {"routes": [r.to_payload() for r in self.config.routes], "default": self.config.default}


def _successor_node(node, block_id: str):
    """The node that consumes a block's output, or None if it is terminal
    (or feeds a parallel fan-in)."""
    from .pipeline import Block, Chain, Parallel, flatten

    def is_output_block(n) -> bool:
        if isinstance(n, Block):
            return n.handle.id == block_id
        if isinstance(n, Chain):
            return is_output_block(n.right)
        return False

    def entry(n):
        while isinstance(n, Chain):
            n = n.left
        return n

    def walk(n):
        if isinstance(n, Chain):
            left_ids = {h.id for h in flatten(n.left)}
            if block_id in left_ids:
                inner = walk(n.left)
                if inner is not None:
                    return inner
                if is_output_block(n.left):
                    return entry(n.right)
                return None
            return walk(n.right)
        if isinstance(n, Parallel):
            for branch in n.branches:
                found = walk(branch)
                if found is not None:
                    return found
            return None
        return None

    return walk(node)


# --- aggregator ---------------------------------------------------------------------------------


VOTE_STRATEGIES = ("majority_vote", "average_probability", "weighted_vote", "max_confidence")


@dataclass
class AggregatorStrategy:
    name: str = "majority_vote"
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.name not in VOTE_STRATEGIES:
            raise InvalidConfig(f"unknown aggregation strategy '{self.name}'")
        if self.name == "weighted_vote":
            if not self.weights:
                raise InvalidConfig("weighted_vote requires weights")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise InvalidConfig("weights must be non-negative with a positive sum")
        elif self.weights:
            raise InvalidConfig(f"strategy '{self.name}' does not take weights")


def aggregator_combine(
    strategy: AggregatorStrategy, branch_outputs: Sequence[Sequence[float] | None]
) -> dict:
    """Combine per-branch probability vectors into one decision.

    Skipped branches (splitter routing) are passed as None and excluded from
    the vote but preserved in ``per_branch`` for transparency. Ties resolve
    to the first class in label order.
    """
    present = [(i, np.asarray(v, dtype=float)) for i, v in enumerate(branch_outputs) if v is not None]
    if not present:
        raise EmptyOutputs("no branch produced an output")
    if any(v.ndim != 1 for _, v in present):
        raise ArityMismatch("branch outputs must be probability vectors")
    arity = len(present[0][1])
    if any(len(v) != arity for _, v in present):
        raise ArityMismatch("branch outputs disagree on class arity")
    if strategy.name == "weighted_vote" and len(strategy.weights) != len(branch_outputs):
        raise ArityMismatch(
            f"weighted_vote has {len(strategy.weights)} weights for {len(branch_outputs)} branches"
        )

    if strategy.name == "average_probability":
        combined = np.mean([v for _, v in present], axis=0)
    elif strategy.name == "max_confidence":
        best = max(present, key=lambda item: (item[1].max(), -item[0]))
        combined = best[1]
    else:
        scores = np.zeros(arity)
        for i, v in present:
            weight = strategy.weights[i] if strategy.name == "weighted_vote" else 1.0
            scores[int(np.argmax(v))] += weight
        combined = scores / scores.sum()
    label_index = int(np.argmax(combined))  # argmax takes the first maximum
    return {
        "label_index": label_index,
        "probabilities": [float(p) for p in combined],
        "per_branch": [None if v is None else [float(p) for p in np.asarray(v, dtype=float)] for v in branch_outputs],
    }


class AggregatorBlock:
    def __init__(self, registry: Registry, *, block_id: str = "aggregator",
                 strategy: str = "majority_vote", weights: Sequence[float] | None = None,
                 display_name: str | None = None):
        self.strategy = AggregatorStrategy(strategy, tuple(weights) if weights else None)
        self.handle = registry.register_block(
            display_name or "Aggregator",
            "aggregator",
            [
                method("combine", MethodRole.TRANSFORM, self.combine,
                       [Param("outputs", "table")], "structure",
                       "Combine parallel branch outputs into one decision."),
                method("get_strategy", MethodRole.READ, self.get_strategy, [], "structure",
                       "Current aggregation strategy."),
                method("set_strategy", MethodRole.UPDATE, self.set_strategy,
                       [Param("strategy", "text"), Param("weights", "table", required=False)],
                       "structure", "Switch strategy: majority_vote, average_probability, "
                       "weighted_vote (with weights), or max_confidence."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    def combine(self, outputs: Sequence[Any]) -> dict:
        vectors: list[Sequence[float] | None] = []
        classes: list[str] | None = None
        input_row: dict | None = None
        records: list[dict | None] = []
        for item in outputs:
            if item is None:
                vectors.append(None)
                records.append(None)
            elif isinstance(item, Mapping):
                vectors.append(item.get("probabilities"))
                records.append({"label": item.get("label"), "probabilities": item.get("probabilities")})
                classes = classes or item.get("classes")
                input_row = input_row or item.get("input")
            else:
                vectors.append(item)
                records.append(None)
        decision = aggregator_combine(self.strategy, vectors)
        result: dict[str, Any] = {
            "label": classes[decision["label_index"]] if classes else decision["label_index"],
            "probabilities": decision["probabilities"],
            "classes": classes or [],
            "per_branch": [
                rec if rec is not None else (None if vec is None else {"probabilities": list(map(float, vec))})
                for rec, vec in zip(records, vectors)
            ],
            "strategy": self.strategy.name,
        }
        if input_row is not None:
            result["input"] = input_row
        return result

    def get_strategy(self) -> dict:
        return {"strategy": self.strategy.name,
                "weights": list(self.strategy.weights) if self.strategy.weights else None}

    def set_strategy(self, strategy: str, weights: Sequence[float] | None = None) -> dict:
        self.strategy = AggregatorStrategy(strategy, tuple(weights) if weights else None)
        return self.get_strategy()

    def state_items(self) -> dict:
        return self.get_strategy()


# --- rule guard -------------------------------------------------------------------------------------


def guard_apply(state: GuardState, input_row: Mapping[str, Any], record: Mapping[str, Any],
                block_id: str = "guard") -> dict:
    """First active firing rule replaces the predicted label; the original
    prediction is retained for audit. Evaluation errors deactivate the
    offending rule instead of failing the prediction."""
    ctx = _decision_ctx(input_row, record)
    for index, entry in enumerate(state.rules):
        if not entry.active:
            continue
        try:
            action = evaluate(entry.ast, ctx)
        except Exception as exc:
            entry.active = False
            state.audit.append({"type": "rule_error", "block": block_id, "rule_index": index,
                                "message": str(exc)})
            continue
        if isinstance(action, Override):
            result = dict(record)
            result["label"] = action.label
            result["overridden"] = True
            result["original_label"] = record.get("label")
            result["override_rule_index"] = index
            event = {"type": "override", "block": block_id, "rule_index": index,
                     "label": action.label, "original_label": record.get("label")}
            state.audit.append(event)
            emit_event(event)
            return result
    return dict(record)


class GuardBlock(_RuleBlock):
    """Overrides harmful or unwanted predictions per user-defined rules."""

    allowed_actions = (Override,)

    def __init__(self, registry: Registry, *, block_id: str = "guard",
                 rules: Sequence[str] = (), bind_context: BindContext | None = None,
                 display_name: str | None = None):
        super().__init__(rules, bind_context)
        self.handle = registry.register_block(
            display_name or "RuleGuard",
            "guard",
            [method("apply", MethodRole.TRANSFORM, self.apply, [Param("decision", "row")],
                    "structure", "Apply override rules to an upstream decision.")]
            + self._rule_methods(),
            block_id=block_id,
        )
        self.handle.owner = self

    def apply(self, decision: Mapping[str, Any]) -> dict:
        input_row = decision.get("input") or {}
        return guard_apply(self.state, input_row, decision, self.handle.id)


# --- input filter -------------------------------------------------------------------------------------


def filter_check(state: FilterState, input_row: Mapping[str, Any], block_id: str = "filter") -> dict:
    """Pass the row through unchanged, or abort with the first firing
    rejection rule."""
    ctx = EvalContext(input=dict(input_row))
    for index, entry in enumerate(state.rules):
        if not entry.active:
            continue
        try:
            action = evaluate(entry.ast, ctx)
        except Exception as exc:
            entry.active = False
            state.audit.append({"type": "rule_error", "block": block_id, "rule_index": index,
                                "message": str(exc)})
            continue
        if isinstance(action, Reject):
            event = {"type": "rejected", "block": block_id, "rule_index": index,
                     "message": action.message}
            state.audit.append(event)
            emit_event(event)
            raise RejectedByFilter(action.message, block_id)
    return dict(input_row)


class FilterBlock(_RuleBlock):
    """Pre-processor rejecting inputs that fall outside intended behavior."""

    allowed_actions = (Reject,)

    def __init__(self, registry: Registry, *, block_id: str = "filter",
                 rules: Sequence[str] = (), bind_context: BindContext | None = None,
                 display_name: str | None = None):
        super().__init__(rules, bind_context)
        self.handle = registry.register_block(
            display_name or "InputFilter",
            "filter",
            [method("check", MethodRole.TRANSFORM, self.check, [Param("row", "row")], "row",
                    "Reject rows matching any active rejection rule.")]
            + self._rule_methods(),
            block_id=block_id,
        )
        self.handle.owner = self

    def check(self, row: Mapping[str, Any]) -> dict:
        return filter_check(self.state, row, self.handle.id)


# --- shutdown trigger ------------------------------------------------------------------------------------


def shutdown_toggle(state: ShutdownState, command: Mapping[str, Any]) -> ShutdownState:
    op = command.get("op")
    if op == "trip":
        state.trip(str(command.get("reason", "")))
    elif op == "reset":
        state.reset()
    else:
        raise InvalidConfig(f"unknown shutdown command '{op}'")
    return state


class ShutdownBlock:
    """Emergency stop: while tripped, every predict on the pipeline errors."""

    def __init__(self, registry: Registry, *, block_id: str = "shutdown",
                 display_name: str | None = None):
        self.pipeline: Pipeline | None = None
        self._local_state = ShutdownState()
        self.audit = AuditLog()
        self.handle = registry.register_block(
            display_name or "ShutdownTrigger",
            "shutdown",
            [
                method("status", MethodRole.READ, self.status, [], "structure",
                       "Whether the emergency stop is active, and why."),
                method("trip", MethodRole.CREATE, self.trip,
                       [Param("reason", "text", required=False, default="")], "structure",
                       "Trip the emergency stop; idempotent."),
                method("reset", MethodRole.DELETE, self.reset, [], "structure",
                       "Clear the emergency stop."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    @property
    def state(self) -> ShutdownState:
        return self.pipeline.shutdown if self.pipeline is not None else self._local_state

    def bind_to_pipeline(self, pipeline: Pipeline) -> None:
        self.pipeline = pipeline

    def status(self) -> dict:
        return self.state.to_payload()

    def trip(self, reason: str = "") -> dict:
        self.state.trip(reason)
        event = {"type": "shutdown", "block": self.handle.id, "reason": reason}
        self.audit.append(event)
        emit_event(event)
        return self.status()

    def reset(self) -> dict:
        self.state.reset()
        event = {"type": "shutdown_reset", "block": self.handle.id}
        self.audit.append(event)
        emit_event(event)
        return self.status()

    def state_items(self) -> dict:
        return self.status()


# --- bias injector -----------------------------------------------------------------------------------------


@dataclass
class Correction:
    row: dict
    label: str
    applied: bool = False

    def to_payload(self) -> dict:
        return {"row": self.row, "label": self.label, "applied": self.applied}


@dataclass
class CorrectionStore:
    corrections: list[Correction] = field(default_factory=list)

    def pending(self) -> list[Correction]:
        return [c for c in self.corrections if not c.applied]

    def to_payload(self) -> list[dict]:
        return [c.to_payload() for c in self.corrections]


def bias_submit_correction(store: CorrectionStore, row: Mapping[str, Any], label: str,
                           classes: Sequence[str]) -> dict:
    if label not in classes:
        raise UnknownLabel(f"label '{label}' is not one of {list(classes)}")
    store.corrections.append(Correction(dict(row), label))
    return {"ok": True, "pending": len(store.pending())}


def bias_apply(store: CorrectionStore, model: Model, encoder: EncodedMatrix,
               step_size: float = 0.5, iterations: int = 25) -> dict:
    """Nudge the model toward the desired labels of pending corrections.

    MLPs take gradient steps on the output layer only; logistic models update
    all weights; trees fall back to an exact-match override lookup. Step size
    is halved (up to 8 times) until the mean desired-class probability
    strictly improved, so a single correction is guaranteed to move the
    model unless it is already saturated.
    """
    pending = store.pending()
    if not pending:
        raise NoPendingCorrections("no pending corrections to apply")
    classes = list(model.classes)
    for c in pending:
        if c.label not in classes:
            raise UnknownLabel(f"label '{c.label}' is not one of {classes}")
    X = np.vstack([encoder.encode_row(c.row) for c in pending])
    y = np.asarray([classes.index(c.label) for c in pending])

    if isinstance(model, TreeModel):
        for vec, c in zip(X, pending):
            model.overrides.append((tuple(float(v) for v in vec), c.label))
            c.applied = True
        return {"applied": len(pending), "mode": "tree_override"}

    Y = np.zeros((len(y), len(classes)))
    Y[np.arange(len(y)), y] = 1.0

    def mean_desired() -> float:
        probs = np.vstack([predict_proba(model, x) for x in X])
        return float(np.mean(probs[np.arange(len(y)), y]))

    before = mean_desired()
    if isinstance(model, MLPModel):
        backup = (model.w2.copy(), model.b2.copy())
    else:
        backup = (model.weights.copy(), model.bias.copy())
    lr = step_size
    for _ in range(8):
        if isinstance(model, MLPModel):
            Z = np.tanh(X @ model.w1 + model.b1)
            obj = logistic_objective(Z, Y)
            flat = np.concatenate([model.w2.ravel(), model.b2])
            for _ in range(iterations):
                _, grad = obj(flat)
                flat = flat - lr * grad
            h, k = model.w2.shape
            model.w2 = flat[: h * k].reshape(h, k)
            model.b2 = flat[h * k :]
        else:
            obj = logistic_objective(X, Y)
            flat = np.concatenate([model.weights.ravel(), model.bias])
            for _ in range(iterations):
                _, grad = obj(flat)
                flat = flat - lr * grad
            d, k = model.weights.shape
            model.weights = flat[: d * k].reshape(d, k)
            model.bias = flat[d * k :]
        after = mean_desired()
        if after > before or before >= 1.0 - 1e-9:
            break
        if isinstance(model, MLPModel):
            model.w2, model.b2 = backup[0].copy(), backup[1].copy()
        else:
            model.weights, model.bias = backup[0].copy(), backup[1].copy()
        lr /= 2.0
    for c in pending:
        c.applied = True
    return {"applied": len(pending), "mode": "gradient", "p_before": before, "p_after": mean_desired()}


class BiasBlock:
    """Collects human re-labels and applies them as a targeted correction
    update to one model block. Submission does not auto-apply; application
    is its own update-role call."""

    def __init__(self, registry: Registry, model_block: ModelBlock, *,
                 block_id: str = "bias", step_size: float = 0.5, iterations: int = 25,
                 display_name: str | None = None):
        self.store = CorrectionStore()
        self.model_block = model_block
        self.step_size = step_size
        self.iterations = iterations
        self.handle = registry.register_block(
            display_name or "BiasInjector",
            "bias",
            [
                method("submit", MethodRole.UPDATE, self.submit,
                       [Param("row", "row"), Param("label", "text")], "structure",
                       "Record a desired label for a feature row."),
                method("corrections", MethodRole.READ, self.list_corrections, [], "table",
                       "Submitted corrections and whether they were applied."),
                method("apply", MethodRole.UPDATE, self.apply, [], "structure",
                       "Apply pending corrections to the target model."),
            ],
            block_id=block_id,
        )
        self.handle.owner = self

    def submit(self, row: Mapping[str, Any], label: str) -> dict:
        clean = self.model_block.dataset.validate_feature_row(row)
        return bias_submit_correction(self.store, clean, label, self.model_block.classes)

    def list_corrections(self) -> list[dict]:
        return self.store.to_payload()

    def apply(self) -> dict:
        if not self.store.pending():
            # lenient when swept by update propagation; the operation-level
            # bias_apply still raises NoPendingCorrections for direct misuse
            return {"applied": 0}
        self.model_block.ensure_trained()
        return bias_apply(
            self.store, self.model_block.model, self.model_block.encoder,
            self.step_size, self.iterations,
        )

    def reset_store(self) -> None:
        self.store.corrections.clear()

    def state_items(self) -> dict:
        return {"corrections": self.store.to_payload()}


# --- logic bomb --------------------------------------------------------------------------------------------


def bomb_monitor(state: BombState, ctx: EvalContext, pipeline: Pipeline | None = None,
                 block_id: str = "bomb") -> Action | None:
    """Evaluate fail-safe rules; Shutdown trips the pipeline's emergency
    stop, Reset restores model parameters and correction stores to their
    post-training snapshots. First firing rule wins."""
    for index, entry in enumerate(state.rules):
        if not entry.active:
            continue
        action = evaluate(entry.ast, ctx)
        if action is None:
            continue
        if isinstance(action, Shutdown):
            event = {"type": "bomb_shutdown", "block": block_id, "rule_index": index}
            if pipeline is not None:
                pipeline.shutdown.trip(f"logic bomb '{block_id}' rule {index}")
        elif isinstance(action, Reset):
            event = {"type": "bomb_reset", "block": block_id, "rule_index": index}
            if pipeline is not None:
                for owner in pipeline.owners():
                    if isinstance(owner, ModelBlock):
                        owner.restore_snapshot()
                    elif isinstance(owner, BiasBlock):
                        owner.reset_store()
        else:
            continue
        state.audit.append(event)
        emit_event(event)
        return action
    return None


class BombBlock(_RuleBlock):
    """Self-monitoring fail-safe combining filtering and shutdown: watches
    decisions (and, on demand, their attributions) and shuts down or resets
    the system when a rule fires."""

    allowed_actions = (Shutdown, Reset)
    attribution_allowed = True

    def __init__(self, registry: Registry, *, block_id: str = "bomb",
                 rules: Sequence[str] = (), bind_context: BindContext | None = None,
                 attribution_mode: str = "auto", attribution_samples: int = 128,
                 background_rows: int = 5, display_name: str | None = None):
        super().__init__(rules, bind_context)
        if attribution_mode not in ("auto", "off"):
            raise InvalidConfig(f"unknown attribution mode '{attribution_mode}'")
        self.attribution_mode = attribution_mode
        self.attribution_samples = attribution_samples
        self.background_rows = background_rows
        self.pipeline: Pipeline | None = None
        self.handle = registry.register_block(
            display_name or "LogicBomb",
            "bomb",
            [method("monitor", MethodRole.TRANSFORM, self.monitor, [Param("decision", "row")],
                    "structure", "Check fail-safe rules against the upstream decision.")]
            + self._rule_methods(),
            block_id=block_id,
        )
        self.handle.owner = self

    def monitor(self, decision: Mapping[str, Any]) -> dict:
        if _IN_BOMB_EVAL.get():
            return dict(decision)
        needs_attr = any(
            entry.active and references_attribution(entry.ast.condition)
            for entry in self.state.rules
        )
        attribution = None
        if needs_attr:
            attribution = self._compute_attribution(decision)
        ctx = _decision_ctx(decision.get("input") or {}, decision, attribution)
        bomb_monitor(self.state, ctx, self.pipeline, self.handle.id)
        return dict(decision)

    def _compute_attribution(self, decision: Mapping[str, Any]) -> dict[str, float]:
        from .errors import AttributionUnavailable

        if self.attribution_mode == "off":
            raise AttributionUnavailable(
                f"logic bomb '{self.handle.id}' needs attributions but on-demand "
                "computation is disabled"
            )
        if self.pipeline is None:
            raise AttributionUnavailable("logic bomb is not bound to a pipeline")
        from .explain import explain_shap, target_from_pipeline

        dataset_block = find_dataset_block(self.pipeline)
        if dataset_block is None:
            raise AttributionUnavailable("pipeline has no dataset block to draw background rows from")
        ds = dataset_block.dataset
        background = [ds.row_as_dict(i, include_target=False)
                      for i in range(min(self.background_rows, len(ds.rows)))]
        target = target_from_pipeline(self.pipeline, "chain")
        classes = decision.get("classes") or list(target.classes)
        label = decision.get("label")
        target_class = label if label in classes else None
        mode = "exact" if len(target.encoder.groups) <= 8 else "sampled"
        token = _IN_BOMB_EVAL.set(True)
        try:
            attribution = explain_shap(
                target, dict(decision.get("input") or {}), background=background,
                mode=mode, samples=self.attribution_samples, seed=0, target_class=target_class,
            )
        finally:
            _IN_BOMB_EVAL.reset(token)
        return dict(attribution.values)
