"""chainlens: composable, inspectable, and controllable AI pipelines.

Build a pipeline out of building blocks (datasets, models, control blocks),
chain them with ``|`` or in parallel groups, and get a REST/tool API,
explanations, and rule-based control over the whole thing for free.
"""

from .data import CATEGORICAL, NUMERIC, ColumnSchema, Dataset, EncodedMatrix, encode, load_dataset_csv
from .models import TrainConfig, predict_proba, representation, train
from .pipeline import (
    Block,
    BlockHandle,
    Chain,
    ExecutionTrace,
    MethodDescriptor,
    MethodRole,
    Parallel,
    Param,
    Pipeline,
    Registry,
    RunnableNode,
    UpdateReport,
    compose_parallel,
    compose_sequential,
    flatten,
    invoke_method,
    method,
    parallel,
    propagate_update,
    register_block,
    run_predict,
    run_transform,
    serialize_structure,
)
from .rules import EvalContext, RuleAst, evaluate, format_rule, parse_rule
from .values import TypedValue

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockHandle",
    "CATEGORICAL",
    "Chain",
    "ColumnSchema",
    "Dataset",
    "EncodedMatrix",
    "EvalContext",
    "ExecutionTrace",
    "MethodDescriptor",
    "MethodRole",
    "NUMERIC",
    "Parallel",
    "Param",
    "Pipeline",
    "Registry",
    "RuleAst",
    "RunnableNode",
    "TrainConfig",
    "TypedValue",
    "UpdateReport",
    "compose_parallel",
    "compose_sequential",
    "encode",
    "evaluate",
    "flatten",
    "format_rule",
    "invoke_method",
    "load_dataset_csv",
    "method",
    "parallel",
    "parse_rule",
    "predict_proba",
    "propagate_update",
    "register_block",
    "representation",
    "run_predict",
    "run_transform",
    "serialize_structure",
    "train",
]
