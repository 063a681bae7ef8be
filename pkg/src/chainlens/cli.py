"""Command-line entry point.

Builds a pipeline from a declarative JSON config (dataset, blocks, and a
chain expression in pipe syntax), then validates it, trains and persists its
models, serves the HTTP API, or runs predictions and explanations headlessly
with canonical JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import jsonutil
from .blocks import (
    AggregatorBlock,
    BiasBlock,
    BombBlock,
    DatasetBlock,
    FilterBlock,
    GuardBlock,
    ModelBlock,
    ShutdownBlock,
    SplitterBlock,
)
from .data import ColumnSchema, load_dataset_csv
from .errors import ChainlensError, InvalidConfig, ParseError, UnknownBlockId
from .models import TrainConfig
from .pipeline import (
    Block,
    BlockHandle,
    Pipeline,
    Registry,
    RunnableNode,
    compose_parallel,
    compose_sequential,
    flatten,
)
from .server import ApiServer

SEED_ENV_VAR = "MATCHLIKE_SEED"

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "blocks", "chain"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "chain": {"type": "string"},
        "dataset": {
            "type": "object",
            "required": ["path", "target", "schema"],
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "target": {"type": "string"},
                "schema": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["name", "kind"],
                        "additionalProperties": False,
                        "properties": {
                            "name": {"type": "string"},
                            "kind": {"enum": ["numeric", "categorical"]},
                            "levels": {"type": "array", "items": {"type": "string"}},
                            "mutable_for_counterfactuals": {"type": "boolean"},
                            "protected": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "blocks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "pattern": "^[a-z][a-z0-9_-]*$"},
                    "kind": {
                        "enum": ["model", "splitter", "aggregator", "guard", "filter",
                                 "shutdown", "bias", "bomb"]
                    },
                    "model": {"enum": ["logistic", "tree", "mlp"]},
                    "config": {"type": "object"},
                    "rules": {"type": "array", "items": {"type": "string"}},
                    "routes": {"type": "array"},
                    "default": {"enum": ["route_to_all", "reject"]},
                    "strategy": {"type": "string"},
                    "weights": {"type": "array", "items": {"type": "number"}},
                    "target_model": {"type": "string"},
                    "attribution_mode": {"enum": ["auto", "off"]},
                },
            },
        },
    },
}


# --- chain expression parsing ----------------------------------------------------------


def _tokenize_chain(text: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch in "|(),":
            tokens.append(("op", ch, pos))
            pos += 1
            continue
        if ch.isalpha() or ch == "_":
            start = pos
            while pos < len(text) and (text[pos].isalnum() or text[pos] in "_-"):
                pos += 1
            tokens.append(("ident", text[start:pos], start))
            continue
        raise ParseError(pos, ("block id", "ParallelBlock", "|"),
                         f"parse error at offset {pos}: unexpected character {ch!r}")
    tokens.append(("eof", "", len(text)))
    return tokens


def parse_chain_expression(text: str, handles: Mapping[str, BlockHandle]) -> RunnableNode:
    """Parse ``a | ParallelBlock(b, c) | d`` into a runnable tree.

    The pipe is left-associative; ParallelBlock needs at least two comma-
    separated operands. Identifiers must be declared block ids.
    """
    tokens = _tokenize_chain(text)
    index = 0

    def peek() -> tuple[str, str, int]:
        return tokens[index]

    def advance() -> tuple[str, str, int]:
        nonlocal index
        token = tokens[index]
        index += 1
        return token

    def expect_op(op: str) -> None:
        kind, value, pos = peek()
        if kind == "op" and value == op:
            advance()
            return
        raise ParseError(pos, (op,))

    def parse_expr() -> RunnableNode:
        node = parse_term()
        while True:
            kind, value, _ = peek()
            if kind == "op" and value == "|":
                advance()
                node = compose_sequential(node, parse_term())
            else:
                return node

    def parse_term() -> RunnableNode:
        kind, value, pos = peek()
        if kind != "ident":
            raise ParseError(pos, ("block id", "ParallelBlock"))
        advance()
        if value == "ParallelBlock":
            expect_op("(")
            branches = [parse_expr()]
            kind, value, pos = peek()
            if not (kind == "op" and value == ","):
                raise ParseError(pos, (",",), f"parse error at offset {pos}: ParallelBlock needs at least two branches")
            while True:
                kind, value, _ = peek()
                if kind == "op" and value == ",":
                    advance()
                    branches.append(parse_expr())
                else:
                    break
            expect_op(")")
            return compose_parallel(branches)
        if value not in handles:
            raise UnknownBlockId(f"chain expression references undeclared block '{value}'")
        return Block(handles[value])

    node = parse_expr()
    kind, _, pos = peek()
    if kind != "eof":
        raise ParseError(pos, ("|", "end of expression"))
    return node


def format_chain_expression(node: RunnableNode) -> str:
    from .pipeline import Chain, Parallel

    if isinstance(node, Block):
        return node.handle.id
    if isinstance(node, Chain):
        return f"{format_chain_expression(node.left)} | {format_chain_expression(node.right)}"
    if isinstance(node, Parallel):
        inner = ", ".join(format_chain_expression(b) for b in node.branches)
        return f"ParallelBlock({inner})"
    raise TypeError(f"not a runnable: {node!r}")


# --- pipeline construction ---------------------------------------------------------------


def _block_seed(base_seed: int, block_id: str, override: Any) -> int:
    if override is not None:
        return int(override)
    return int(base_seed) + (zlib.crc32(block_id.encode("utf-8")) % 100003)


def load_config(path: str | Path) -> dict:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidConfig(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    import jsonschema

    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InvalidConfig(f"config schema violation at {list(exc.absolute_path)}: {exc.message}") from None
    return config


def build_pipeline(config: Mapping[str, Any], base_dir: str | Path = ".") -> Pipeline:
    base_dir = Path(base_dir)
    seed = int(os.environ.get(SEED_ENV_VAR, config.get("seed", 0)))

    ds_cfg = config["dataset"]
    schema = [
        ColumnSchema(
            name=col["name"],
            kind=col["kind"],
            levels=tuple(col.get("levels", ())),
            mutable_for_counterfactuals=col.get("mutable_for_counterfactuals", True),
            protected=col.get("protected", False),
        )
        for col in ds_cfg["schema"]
    ]
    csv_path = Path(ds_cfg["path"])
    if not csv_path.is_absolute():
        csv_path = base_dir / csv_path
    dataset = load_dataset_csv(csv_path, schema, ds_cfg["target"])

    registry = Registry()
    handles: dict[str, BlockHandle] = {}
    dataset_block = DatasetBlock(dataset, registry, block_id="dataset")
    handles["dataset"] = dataset_block.handle

    model_blocks: dict[str, ModelBlock] = {}
    deferred_bias: list[Mapping[str, Any]] = []
    for decl in config["blocks"]:
        block_id = decl["id"]
        if block_id in handles:
            raise InvalidConfig(f"duplicate block id '{block_id}'")
        kind = decl["kind"]
        if kind == "model":
            if "model" not in decl:
                raise InvalidConfig(f"model block '{block_id}' is missing its model kind")
            cfg = dict(decl.get("config", {}))
            train_config = TrainConfig(
                seed=_block_seed(seed, block_id, cfg.pop("seed", None)),
                learning_rate=cfg.pop("learning_rate", None),
                epochs=cfg.pop("epochs", None),
                hidden_width=cfg.pop("hidden_width", 8),
                max_depth=cfg.pop("max_depth", 4),
            )
            if cfg:
                raise InvalidConfig(f"unknown training option(s) {sorted(cfg)} on block '{block_id}'")
            adapter = ModelBlock(dataset, decl["model"], registry, config=train_config, block_id=block_id)
            model_blocks[block_id] = adapter
        elif kind == "splitter":
            adapter = SplitterBlock(
                registry, block_id=block_id,
                routes=decl.get("routes", ()), default=decl.get("default", "route_to_all"),
            )
        elif kind == "aggregator":
            adapter = AggregatorBlock(
                registry, block_id=block_id,
                strategy=decl.get("strategy", "majority_vote"), weights=decl.get("weights"),
            )
        elif kind == "guard":
            adapter = GuardBlock(registry, block_id=block_id, rules=decl.get("rules", ()))
        elif kind == "filter":
            adapter = FilterBlock(registry, block_id=block_id, rules=decl.get("rules", ()))
        elif kind == "shutdown":
            adapter = ShutdownBlock(registry, block_id=block_id)
        elif kind == "bomb":
            adapter = BombBlock(
                registry, block_id=block_id, rules=decl.get("rules", ()),
                attribution_mode=decl.get("attribution_mode", "auto"),
            )
        elif kind == "bias":
            deferred_bias.append(decl)
            continue
        else:  # unreachable given schema validation
            raise InvalidConfig(f"unknown block kind '{kind}'")
        handles[block_id] = adapter.handle

    for decl in deferred_bias:
        target_model = decl.get("target_model")
        if target_model is None:
            if len(model_blocks) != 1:
                raise InvalidConfig(
                    f"bias block '{decl['id']}' needs target_model when there is not exactly one model"
                )
            target_model = next(iter(model_blocks))
        if target_model not in model_blocks:
            raise InvalidConfig(f"bias block '{decl['id']}' targets unknown model '{target_model}'")
        adapter = BiasBlock(registry, model_blocks[target_model], block_id=decl["id"])
        handles[decl["id"]] = adapter.handle

    root = parse_chain_expression(config["chain"], handles)
    chained = {h.id for h in flatten(root)}
    unreferenced = sorted(set(handles) - chained)
    if unreferenced:
        raise InvalidConfig(
            f"block(s) {unreferenced} are declared but not referenced in the chain; "
            "only chained blocks get API routes"
        )
    return Pipeline(root, registry).bind()


def warmup(pipeline: Pipeline) -> None:
    from .blocks import find_model_blocks

    for model_block in find_model_blocks(pipeline):
        model_block.ensure_trained()


def save_models(pipeline: Pipeline, out_dir: str | Path) -> Path:
    from .blocks import find_model_blocks

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": 1,
        "models": {mb.handle.id: mb.dump_parameters() for mb in find_model_blocks(pipeline)},
    }
    path = out_dir / "models.json"
    path.write_text(jsonutil.dumps(doc), encoding="utf-8")
    return path


def load_models(pipeline: Pipeline, models_dir: str | Path) -> None:
    from .blocks import find_model_blocks

    path = Path(models_dir) / "models.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise InvalidConfig(f"unsupported model document version {doc.get('version')!r}")
    for model_block in find_model_blocks(pipeline):
        if model_block.handle.id in doc["models"]:
            model_block.load_parameters(doc["models"][model_block.handle.id])


# --- subcommands --------------------------------------------------------------------------


def _fail(exc: Exception) -> int:
    error: dict[str, Any] = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError):
        error["position"] = exc.position
        error["expected"] = list(exc.expected)
    column = getattr(exc, "column", None)
    if column is not None:
        error["column"] = column
    print(jsonutil.dumps({"error": error}), file=sys.stderr)
    return 1


def _read_row(path: str) -> dict:
    try:
        row = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidConfig(f"input file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"input row is not valid JSON: {exc}") from None
    if not isinstance(row, dict):
        raise InvalidConfig("input row must be a JSON object of feature values")
    return row


def _prepare(args: argparse.Namespace) -> Pipeline:
    config = load_config(args.config)
    pipeline = build_pipeline(config, Path(args.config).parent)
    if getattr(args, "models", None):
        load_models(pipeline, args.models)
    warmup(pipeline)
    return pipeline


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    pipeline = build_pipeline(config, Path(args.config).parent)
    print(jsonutil.dumps(pipeline.serialize()))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    pipeline = build_pipeline(config, Path(args.config).parent)
    warmup(pipeline)
    path = save_models(pipeline, args.out)
    print(jsonutil.dumps({"saved": str(path)}))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .agent import scripted_backend
    from .server import create_app

    pipeline = _prepare(args)
    backend = scripted_backend(default_chat_script())
    server = ApiServer(pipeline, backend=backend)
    app = create_app(server)
    uvicorn.run(app, host=args.bind, port=args.port, log_level="warning")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    pipeline = _prepare(args)
    row = _read_row(args.input)
    server = ApiServer(pipeline)
    status, payload = server.dispatch("POST", "/chain/predict", {"input": row})
    print(jsonutil.dumps(payload))
    if status != 200:
        return 1
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    pipeline = _prepare(args)
    body: dict[str, Any] = {"target": args.target}
    if args.input:
        body["instance"] = _read_row(args.input)
    if args.params:
        try:
            body["params"] = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"--params is not valid JSON: {exc}") from None
    server = ApiServer(pipeline)
    status, payload = server.dispatch("POST", f"/explain/{args.kind}", body)
    print(jsonutil.dumps(payload))
    return 0 if status == 200 else 1


def default_chat_script() -> list[dict]:
    """Deterministic offline chat script used by `serve` when no real
    language-model backend is wired up."""

    def structure_answer(history) -> dict:
        body = history[-1].tool_result["body"]
        names: list[str] = []

        def collect(doc: dict) -> None:
            if doc.get("kind") == "block":
                names.append(doc["id"])
            for child in doc.get("children", []) or []:
                collect(child)
            for branch in doc.get("branches", []) or []:
                collect(branch)

        if isinstance(body, dict) and "value" in body:
            collect(body["value"])
        return {"text": "The pipeline contains these blocks: " + ", ".join(names) + "."}

    def shutdown_answer(history) -> dict:
        body = history[-1].tool_result["body"]
        active = isinstance(body, dict) and body.get("value", {}).get("active")
        return {"text": "The emergency stop is currently "
                + ("ACTIVE; predictions are blocked." if active else "inactive; predictions are allowed.")}

    return [
        {"match": r"block|structure|pipeline|chain", "respond": [
            {"tool": "chain_structure", "args": {}}, structure_answer,
        ]},
        {"match": r"shutdown|stop|halt", "respond": [
            {"tool": "tools_list", "args": {}}, shutdown_answer,
        ]},
        {"match": r"tool", "respond": [
            {"tool": "tools_list", "args": {}},
            {"text": "I listed the generated tools; every block method is callable."},
        ]},
    ]


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainlens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="Parse the config, bind rules, print the chain structure.")
    p_validate.add_argument("--config", required=True)
    p_validate.set_defaults(fn=cmd_validate)

    p_train = sub.add_parser("train", help="Train all models and persist their parameters.")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(fn=cmd_train)

    p_serve = sub.add_parser("serve", help="Serve the HTTP API.")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--bind", default="127.0.0.1")
    p_serve.add_argument("--models", default=None)
    p_serve.set_defaults(fn=cmd_serve)

    p_predict = sub.add_parser("predict", help="Predict one row; envelope JSON on stdout.")
    p_predict.add_argument("--config", required=True)
    p_predict.add_argument("--input", required=True)
    p_predict.add_argument("--models", default=None)
    p_predict.set_defaults(fn=cmd_predict)

    p_explain = sub.add_parser("explain", help="Run an explainer; envelope JSON on stdout.")
    p_explain.add_argument("--config", required=True)
    p_explain.add_argument("--kind", required=True,
                           choices=["lime", "shap", "whatif", "counterfactual", "prototypes", "examples"])
    p_explain.add_argument("--target", default="chain")
    p_explain.add_argument("--input", default=None)
    p_explain.add_argument("--params", default=None)
    p_explain.add_argument("--models", default=None)
    p_explain.set_defaults(fn=cmd_explain)

    return parser


def run_cli(argv: Sequence[str]) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except ChainlensError as exc:
        return _fail(exc)
    except Exception as exc:  # unexpected; still emit machine-readable error
        return _fail(exc)


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
