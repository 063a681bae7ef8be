"""Auto-generated REST surface over a pipeline.

Every registered method becomes a route at ``{verb} /blocks/{block}/{method}``
with the verb derived from its role (Create→POST, Read→GET, Update→PUT,
Delete→DELETE, Predict/Transform→POST). Special routes expose the chain
structure, chain prediction, the six explainers, generated tool schemas,
chat, and the emergency stop. Every success response is the uniform envelope
``{"value", "data_type", "updated", "events"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from starlette.requests import Request
from starlette.responses import Response

from . import jsonutil
from .errors import (
    ArityMismatch,
    AttributionUnavailable,
    ChainlensError,
    DimensionMismatch,
    EmptyDataset,
    EmptyOutputs,
    IndexOutOfRange,
    InvalidConfig,
    InvalidRule,
    KTooLarge,
    MissingHeader,
    NoBranchMatched,
    NoPendingCorrections,
    NoTransformMethod,
    ParseError,
    RejectedByFilter,
    SchemaMismatch,
    ShutdownActive,
    SingleClassDataset,
    TargetNotPredictive,
    TooManyFeaturesForExact,
    TypeMismatch,
    UnboundField,
    UnknownBlock,
    UnknownLabel,
    UnknownMethod,
    UnknownBlockId,
)
from .pipeline import MethodRole, Param, Pipeline, flatten
from .values import check_param, parse_query_param

VERB_FOR_ROLE = {
    MethodRole.CREATE: "POST",
    MethodRole.READ: "GET",
    MethodRole.UPDATE: "PUT",
    MethodRole.DELETE: "DELETE",
    MethodRole.PREDICT: "POST",
    MethodRole.TRANSFORM: "POST",
}

EXPLAIN_KINDS = ("lime", "shap", "whatif", "counterfactual", "prototypes", "examples")

ENVELOPE_SCHEMA = {
    "type": "object",
    "properties": {
        "value": {},
        "data_type": {"enum": ["scalar", "vector", "table", "row", "attribution", "text", "structure"]},
        "updated": {"type": "boolean"},
        "events": {"type": "array", "items": {"type": "object"}},
    },
    "required": ["value", "data_type", "updated", "events"],
    "additionalProperties": False,
}

_NOT_FOUND = (UnknownBlock, UnknownMethod)
_BAD_REQUEST = (
    TypeMismatch, SchemaMismatch, ParseError, InvalidRule, InvalidConfig, UnknownLabel,
    KTooLarge, TooManyFeaturesForExact, EmptyOutputs, ArityMismatch, NoBranchMatched,
    IndexOutOfRange, UnknownBlockId, NoPendingCorrections, EmptyDataset, SingleClassDataset,
    DimensionMismatch, UnboundField, AttributionUnavailable, NoTransformMethod,
    TargetNotPredictive, MissingHeader,
)


@dataclass
class Route:
    verb: str
    path: str
    kind: str  # "method" | "special"
    params: tuple[Param, ...] = ()
    block_id: str | None = None
    method_name: str | None = None
    special: str | None = None
    description: str = ""
    tool_name: str = ""


@dataclass
class RouteTable:
    routes: list[Route] = field(default_factory=list)
    _index: dict[tuple[str, str], Route] = field(default_factory=dict)

    def add(self, route: Route) -> None:
        key = (route.verb, route.path)
        if key in self._index:
            raise InvalidConfig(f"duplicate route {route.verb} {route.path}")
        self.routes.append(route)
        self._index[key] = route

    def lookup(self, verb: str, path: str) -> Route | None:
        return self._index.get((verb.upper(), path))

    def by_tool(self, name: str) -> Route | None:
        for route in self.routes:
            if route.tool_name == name:
                return route
        return None


def _tool_name(*parts: str) -> str:
    return "_".join(p.replace("-", "_") for p in parts)


_SPECIALS = [
    ("GET", "/chain", "chain_structure", (),
     "Fetch the pipeline structure: blocks, chains, parallel groups, and their methods."),
    ("POST", "/chain/predict", "chain_predict", (Param("input", "row"),),
     "Run a feature row through the whole chain and return the decision record."),
    ("POST", "/explain/lime", "explain_lime",
     (Param("target", "text", required=False, default="chain"), Param("instance", "row"),
      Param("params", "row", required=False)),
     "Local surrogate attributions for an instance, per feature column."),
    ("POST", "/explain/shap", "explain_shap",
     (Param("target", "text", required=False, default="chain"), Param("instance", "row"),
      Param("params", "row", required=False)),
     "Shapley-value attributions for an instance, per feature column."),
    ("POST", "/explain/whatif", "explain_whatif",
     (Param("target", "text", required=False, default="chain"), Param("instance", "row"),
      Param("params", "row", required=False)),
     "Apply hypothetical edits to a row and return the resulting decision and fired events."),
    ("POST", "/explain/counterfactual", "explain_counterfactual",
     (Param("target", "text", required=False, default="chain"), Param("instance", "row"),
      Param("params", "row", required=False)),
     "Search for minimal input changes that reach a different label."),
    ("POST", "/explain/prototypes", "explain_prototypes",
     (Param("target", "text", required=False, default="chain"),
      Param("params", "row", required=False)),
     "Select prototype and criticism rows summarizing the training data."),
    ("POST", "/explain/examples", "explain_examples",
     (Param("target", "text", required=False, default="chain"), Param("instance", "row"),
      Param("params", "row", required=False)),
     "Training rows most similar to an instance in model representation space."),
    ("GET", "/tools", "tools_list", (),
     "Tool schemas generated from this route table, one tool per route."),
    ("POST", "/chat", "chat_send", (Param("session", "text"), Param("message", "text")),
     "Send a chat message; the agent may call generated tools before answering."),
    ("POST", "/shutdown", "shutdown_trip", (Param("reason", "text", required=False, default=""),),
     "Trip the pipeline-wide emergency stop."),
    ("DELETE", "/shutdown", "shutdown_reset", (),
     "Clear the pipeline-wide emergency stop."),
]


def build_routes(pipeline: Pipeline) -> RouteTable:
    """Deterministic route table: block methods in flatten/declaration order,
    then the fixed special routes."""
    table = RouteTable()
    for handle in flatten(pipeline.root):
        for descriptor in handle.methods:
            table.add(
                Route(
                    verb=VERB_FOR_ROLE[descriptor.role],
                    path=f"/blocks/{handle.id}/{descriptor.name}",
                    kind="method",
                    params=descriptor.params,
                    block_id=handle.id,
                    method_name=descriptor.name,
                    description=f"[{handle.kind} block '{handle.id}'] "
                    + (descriptor.description or f"Invoke method '{descriptor.name}'."),
                    tool_name=_tool_name(handle.id, descriptor.name),
                )
            )
    for verb, path, special, params, description in _SPECIALS:
        table.add(
            Route(
                verb=verb, path=path, kind="special", params=tuple(params),
                special=special, description=description, tool_name=special,
            )
        )
    return table


_JSON_TYPE = {
    "number": "number",
    "integer": "integer",
    "text": "string",
    "boolean": "boolean",
    "row": "object",
    "table": "array",
}


def generate_tool_schemas(table: RouteTable) -> list[dict]:
    """One tool per route; parameter documents mirror the method descriptors."""
    tools = []
    for route in table.routes:
        properties = {
            p.name: {"type": _JSON_TYPE[p.type], "description": f"{p.type} parameter"}
            for p in route.params
        }
        tools.append(
            {
                "name": route.tool_name,
                "description": route.description or f"Call {route.verb} {route.path}.",
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": [p.name for p in route.params if p.required],
                },
                "verb": route.verb,
                "path": route.path,
            }
        )
    return tools


def make_envelope(value: Any, data_type: str, updated: bool, events: list[dict]) -> dict:
    return {
        "value": jsonutil.to_jsonable(value),
        "data_type": data_type,
        "updated": updated,
        "events": jsonutil.to_jsonable(events),
    }


def _error_body(exc: Exception) -> dict:
    error: dict[str, Any] = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, TypeMismatch):
        error["param"] = exc.param
        error["method"] = exc.method
    if isinstance(exc, ParseError):
        error["position"] = exc.position
        error["expected"] = list(exc.expected)
    if isinstance(exc, SchemaMismatch):
        error["row"] = exc.row
        error["column"] = exc.column
    return {"error": error}


def _parse_args(route: Route, body: Mapping[str, Any] | None, query: Mapping[str, str] | None) -> dict:
    method_name = route.method_name or route.special or route.path
    if route.verb == "GET":
        raw = dict(query or {})
        known = {p.name for p in route.params}
        for key in raw:
            if key not in known:
                raise TypeMismatch(method_name, key, f"unknown query parameter '{key}'")
        out = {}
        for param in route.params:
            if param.name in raw:
                out[param.name] = parse_query_param(method_name, param.name, param.type, raw[param.name])
            elif param.required:
                raise TypeMismatch(method_name, param.name, f"missing required parameter '{param.name}'")
            else:
                out[param.name] = param.default
        return out
    raw = dict(body or {})
    known = {p.name for p in route.params}
    for key in raw:
        if key not in known:
            raise TypeMismatch(method_name, key, f"unknown parameter '{key}'")
    out = {}
    for param in route.params:
        if param.name in raw and raw[param.name] is not None:
            out[param.name] = check_param(method_name, param.name, param.type, raw[param.name])
        elif param.required:
            raise TypeMismatch(method_name, param.name, f"missing required parameter '{param.name}'")
        else:
            out[param.name] = param.default
    return out


class ApiServer:
    """Bundles the pipeline, its route table, tool schemas, and chat state."""

    def __init__(self, pipeline: Pipeline, backend: Any = None, max_tool_calls: int = 8):
        from .agent import ChatSessions

        self.pipeline = pipeline
        self.table = build_routes(pipeline)
        self.tools = generate_tool_schemas(self.table)
        self.backend = backend
        self.max_tool_calls = max_tool_calls
        self.sessions = ChatSessions()

    def dispatch(
        self,
        verb: str,
        path: str,
        body: Mapping[str, Any] | None = None,
        query: Mapping[str, str] | None = None,
    ) -> tuple[int, dict]:
        return dispatch_request(self.pipeline, self.table, verb, path, body, query, server=self)


def dispatch_request(
    pipeline: Pipeline,
    table: RouteTable,
    verb: str,
    path: str,
    body: Mapping[str, Any] | None = None,
    query: Mapping[str, str] | None = None,
    *,
    server: ApiServer | None = None,
) -> tuple[int, dict]:
    """Resolve, type-check, execute, and wrap one request.

    Returns (HTTP status, JSON-ready payload). Update-role executions run
    their propagation sweep inside the same exclusive section and mark the
    envelope ``updated``.
    """
    route = table.lookup(verb, path)
    if route is None:
        return 404, {"error": {"type": "UnknownRoute", "message": f"no route {verb} {path}"}}
    try:
        args = _parse_args(route, body, query)
        if route.kind == "method":
            value, updated, trace, _report = pipeline.invoke(route.block_id, route.method_name, args)
            return 200, make_envelope(value.payload, value.data_type, updated, trace.events)
        return _dispatch_special(pipeline, table, route, args, server)
    except ShutdownActive as exc:
        return 409, _error_body(exc)
    except RejectedByFilter as exc:
        events = getattr(exc, "events", None) or [
            {"type": "rejected", "block": exc.block_id, "message": exc.message}
        ]
        envelope = make_envelope(
            {"rejected": True, "message": exc.message}, "structure", False, events
        )
        return 422, envelope
    except _NOT_FOUND as exc:
        return 404, _error_body(exc)
    except _BAD_REQUEST as exc:
        return 400, _error_body(exc)
    except ChainlensError as exc:
        return 400, _error_body(exc)
    except Exception as exc:  # pragma: no cover - defensive
        return 500, {"error": {"type": type(exc).__name__, "message": str(exc)}}


def _dispatch_special(
    pipeline: Pipeline,
    table: RouteTable,
    route: Route,
    args: Mapping[str, Any],
    server: ApiServer | None,
) -> tuple[int, dict]:
    special = route.special
    if special == "chain_structure":
        return 200, make_envelope(pipeline.serialize(), "structure", False, [])
    if special == "chain_predict":
        if pipeline.shutdown.active:  # stop before doing any validation work
            raise ShutdownActive(pipeline.shutdown.reason)
        row = args["input"]
        from .blocks import find_dataset_block

        dataset_block = find_dataset_block(pipeline)
        if dataset_block is not None:
            try:
                row = dataset_block.dataset.validate_feature_row(row)
            except SchemaMismatch as exc:
                raise TypeMismatch("chain_predict", exc.column or "input", str(exc)) from None
        value, trace = pipeline.predict(row)
        return 200, make_envelope(value.payload, value.data_type, False, trace.events)
    if special in {f"explain_{kind}" for kind in EXPLAIN_KINDS}:
        return _dispatch_explain(pipeline, special.removeprefix("explain_"), args)
    if special == "tools_list":
        return 200, make_envelope(generate_tool_schemas(table), "table", False, [])
    if special == "chat_send":
        from .agent import converse_session

        if server is None or server.backend is None:
            raise InvalidConfig("no chat backend configured")
        turns = converse_session(
            server.sessions, server.backend, pipeline, table,
            args["session"], args["message"], max_tool_calls=server.max_tool_calls,
        )
        return 200, make_envelope([t.to_payload() for t in turns], "structure", False, [])
    if special == "shutdown_trip":
        pipeline.shutdown.trip(args.get("reason") or "")
        event = {"type": "shutdown", "block": None, "reason": args.get("reason") or ""}
        return 200, make_envelope(pipeline.shutdown.to_payload(), "structure", True, [event])
    if special == "shutdown_reset":
        pipeline.shutdown.reset()
        return 200, make_envelope(
            pipeline.shutdown.to_payload(), "structure", True, [{"type": "shutdown_reset", "block": None}]
        )
    raise InvalidConfig(f"unhandled special route '{special}'")


def _dispatch_explain(pipeline: Pipeline, kind: str, args: Mapping[str, Any]) -> tuple[int, dict]:
    from . import explain as ex

    params = dict(args.get("params") or {})
    target_spec = args.get("target") or "chain"
    with pipeline.lock.read():
        target = ex.target_from_pipeline(pipeline, target_spec)
        if kind == "lime":
            result = ex.explain_lime(
                target, args["instance"],
                n_samples=int(params.get("n_samples", 2000)),
                kernel_width=params.get("kernel_width"),
                seed=int(params.get("seed", 0)),
                target_class=params.get("target_class"),
            )
            return 200, make_envelope(result.to_payload(), "attribution", False, [])
        if kind == "shap":
            result = ex.explain_shap(
                target, args["instance"],
                background=params.get("background"),
                mode=params.get("mode", "exact"),
                samples=int(params.get("samples", 2048)),
                seed=int(params.get("seed", 0)),
                target_class=params.get("target_class"),
            )
            return 200, make_envelope(result.to_payload(), "attribution", False, [])
        if kind == "whatif":
            result = ex.explain_whatif(target, args["instance"], params.get("edits"))
            return 200, make_envelope(result.to_payload(), "structure", False, result.events)
        if kind == "counterfactual":
            result = ex.explain_counterfactual(
                target, args["instance"],
                target_label=params.get("target_label"),
                k=int(params.get("k", 3)),
                max_iters=int(params.get("max_iters", 200)),
                seed=int(params.get("seed", 0)),
                proximity_weight=float(params.get("proximity_weight", 0.1)),
                diversity_weight=float(params.get("diversity_weight", 0.05)),
                step_size=float(params.get("step_size", 0.25)),
            )
            return 200, make_envelope(result.to_payload(), "structure", False, [])
        if kind == "prototypes":
            if target.dataset is None:
                raise TargetNotPredictive("prototypes need a dataset")
            result = ex.explain_prototypes(
                target.dataset,
                k_prototypes=int(params.get("k_prototypes", 5)),
                k_criticisms=int(params.get("k_criticisms", 0)),
                bandwidth=params.get("bandwidth"),
                encoder=target.encoder,
            )
            return 200, make_envelope(result.to_payload(), "structure", False, [])
        if kind == "examples":
            from .blocks import find_model_blocks

            models = find_model_blocks(pipeline)
            model_block = None
            if target.name != "chain":
                owner = pipeline.registry.get(target.name).owner
                if hasattr(owner, "model"):
                    model_block = owner
            if model_block is None:
                if not models:
                    raise TargetNotPredictive("similar-example search needs a model block")
                model_block = models[0]
            model_block.ensure_trained()
            result = ex.explain_examples(
                target.dataset, model_block.model, args["instance"],
                k=int(params.get("k", 5)), encoder=model_block.encoder,
            )
            return 200, make_envelope(result.entries, "table", False, [])
    raise InvalidConfig(f"unknown explanation kind '{kind}'")


def create_app(server: ApiServer):
    """FastAPI adapter over :func:`dispatch_request`; bodies are parsed and
    responses rendered with the canonical JSON encoder."""
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from starlette.concurrency import run_in_threadpool

    app = FastAPI(title="chainlens", docs_url=None, redoc_url=None, openapi_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.api_route("/{rest:path}", methods=["GET", "POST", "PUT", "DELETE"])
    async def endpoint(rest: str, request: Request) -> Response:
        raw = await request.body()
        body = None
        if raw:
            try:
                body = json.loads(raw)
            except json.JSONDecodeError:
                return Response(
                    jsonutil.dumps({"error": {"type": "InvalidJson", "message": "request body is not valid JSON"}}),
                    status_code=400, media_type="application/json",
                )
            if not isinstance(body, dict):
                body = {"input": body}
        query = dict(request.query_params)
        status, payload = await run_in_threadpool(
            server.dispatch, request.method, "/" + rest, body, query
        )
        return Response(jsonutil.dumps(payload), status_code=status, media_type="application/json")

    return app
