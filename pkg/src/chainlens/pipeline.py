"""Block registry, composition algebra, and execution semantics.

A pipeline is a tree of runnable nodes: single blocks, sequential chains
(output of the left stage feeds the right stage), and parallel groups
(every branch sees the same input; outputs are collected in declaration
order). Methods registered on a block carry exactly one role; Predict and
Transform methods drive execution, CRUD methods are exposed for control and
trigger downstream update propagation.
"""

from __future__ import annotations

import hashlib
import re
import threading
import time
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, Mapping, Sequence

from . import jsonutil
from .errors import (
    DuplicateBlockInChain,
    DuplicateMethodName,
    MultiplePredictMethods,
    MultipleTransformMethods,
    NoTransformMethod,
    RejectedByFilter,
    ShutdownActive,
    TooFewBranches,
    TypeMismatch,
    UnknownBlock,
    UnknownMethod,
)
from .values import PARAM_TYPES, TypedValue, accepts_value, check_param


class MethodRole(str, Enum):
    PREDICT = "predict"
    TRANSFORM = "transform"
    CREATE = "create"
    READ = "read"
    UPDATE = "update"
    DELETE = "delete"


CRUD_ROLES = (MethodRole.CREATE, MethodRole.UPDATE, MethodRole.DELETE)

_MISSING = object()


@dataclass
class Param:
    name: str
    type: str
    required: bool = True
    default: Any = None

    def __post_init__(self) -> None:
        if self.type not in PARAM_TYPES:
            raise TypeError(f"unknown parameter type '{self.type}'")


@dataclass
class MethodDescriptor:
    """A registered callable plus the metadata the API and agents see."""

    name: str
    role: MethodRole
    fn: Callable
    params: tuple[Param, ...] = ()
    returns: str = "structure"
    description: str = ""

    def __post_init__(self) -> None:
        self.role = MethodRole(self.role)
        self.params = tuple(self.params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise DuplicateMethodName(f"duplicate parameter name in method '{self.name}'")


def method(
    name: str,
    role: MethodRole | str,
    fn: Callable,
    params: Sequence[Param] = (),
    returns: str = "structure",
    description: str = "",
) -> MethodDescriptor:
    return MethodDescriptor(name, MethodRole(role), fn, tuple(params), returns, description)


@dataclass
class BlockHandle:
    """A registered building block: id, display name, kind tag, methods."""

    id: str
    display_name: str
    kind: str
    methods: list[MethodDescriptor]
    owner: Any = None  # optional adapter object providing bind/snapshot hooks

    def method(self, name: str) -> MethodDescriptor:
        for m in self.methods:
            if m.name == name:
                return m
        raise UnknownMethod(f"block '{self.id}' has no method '{name}'")

    @property
    def predict_method(self) -> MethodDescriptor | None:
        return next((m for m in self.methods if m.role == MethodRole.PREDICT), None)

    @property
    def transform_method(self) -> MethodDescriptor | None:
        return next((m for m in self.methods if m.role == MethodRole.TRANSFORM), None)

    def __or__(self, other: "BlockHandle | RunnableNode") -> "RunnableNode":
        return compose_sequential(self, other)

    def __ror__(self, other: "BlockHandle | RunnableNode") -> "RunnableNode":
        return compose_sequential(other, self)


def _slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9_]+", "-", name.lower()).strip("-")
    return slug or "block"


class Registry:
    """Assigns unique ids and resolves blocks for the API layer."""

    def __init__(self) -> None:
        self._blocks: dict[str, BlockHandle] = {}

    def register_block(
        self,
        display_name: str,
        kind: str,
        methods: Sequence[MethodDescriptor],
        *,
        block_id: str | None = None,
    ) -> BlockHandle:
        methods = list(methods)
        names = [m.name for m in methods]
        dupes = [n for n in names if names.count(n) > 1]
        if dupes:
            raise DuplicateMethodName(f"duplicate method name '{dupes[0]}' on block '{display_name}'")
        if sum(1 for m in methods if m.role == MethodRole.PREDICT) > 1:
            raise MultiplePredictMethods(f"block '{display_name}' declares more than one predict method")
        if sum(1 for m in methods if m.role == MethodRole.TRANSFORM) > 1:
            raise MultipleTransformMethods(f"block '{display_name}' declares more than one transform method")
        base = _slugify(block_id or display_name)
        candidate = base
        suffix = 2
        while candidate in self._blocks:
            candidate = f"{base}-{suffix}"
            suffix += 1
        handle = BlockHandle(candidate, display_name, kind, methods)
        self._blocks[candidate] = handle
        return handle

    def get(self, block_id: str) -> BlockHandle:
        if block_id not in self._blocks:
            raise UnknownBlock(f"no block with id '{block_id}'")
        return self._blocks[block_id]

    def __contains__(self, block_id: str) -> bool:
        return block_id in self._blocks

    def blocks(self) -> list[BlockHandle]:
        return list(self._blocks.values())


def register_block(
    registry: Registry, display_name: str, kind: str, methods: Sequence[MethodDescriptor]
) -> BlockHandle:
    return registry.register_block(display_name, kind, methods)


# --- runnable tree ---------------------------------------------------------------


class RunnableNode:
    def __or__(self, other: "RunnableNode | BlockHandle") -> "RunnableNode":
        return compose_sequential(self, other)

    def __ror__(self, other: "RunnableNode | BlockHandle") -> "RunnableNode":
        return compose_sequential(other, self)


@dataclass
class Block(RunnableNode):
    handle: BlockHandle


@dataclass
class Chain(RunnableNode):
    left: RunnableNode
    right: RunnableNode


@dataclass
class Parallel(RunnableNode):
    branches: tuple[RunnableNode, ...]


def as_node(value: RunnableNode | BlockHandle) -> RunnableNode:
    if isinstance(value, BlockHandle):
        return Block(value)
    if isinstance(value, RunnableNode):
        return value
    raise TypeError(f"not a runnable: {value!r}")


def flatten(node: RunnableNode | BlockHandle) -> list[BlockHandle]:
    """Blocks of the tree in execution order (parallel branches depth-first,
    declaration order)."""
    node = as_node(node)
    if isinstance(node, Block):
        return [node.handle]
    if isinstance(node, Chain):
        return flatten(node.left) + flatten(node.right)
    return [h for branch in node.branches for h in flatten(branch)]


def _check_disjoint(parts: Sequence[RunnableNode]) -> None:
    seen: set[str] = set()
    for part in parts:
        for handle in flatten(part):
            if handle.id in seen:
                raise DuplicateBlockInChain(f"block '{handle.id}' appears more than once")
            seen.add(handle.id)


def compose_sequential(left: RunnableNode | BlockHandle, right: RunnableNode | BlockHandle) -> Chain:
    left, right = as_node(left), as_node(right)
    _check_disjoint([left, right])
    return Chain(left, right)


def compose_parallel(branches: Sequence[RunnableNode | BlockHandle]) -> Parallel:
    if len(branches) < 2:
        raise TooFewBranches("a parallel group needs at least two branches")
    nodes = tuple(as_node(b) for b in branches)
    _check_disjoint(nodes)
    return Parallel(nodes)


def parallel(*branches: RunnableNode | BlockHandle) -> Parallel:
    return compose_parallel(list(branches))


# --- execution trace ----------------------------------------------------------------


@dataclass
class ExecutionTrace:
    """Per-call record of method invocations and fired control events."""

    invocations: list[tuple[str, str, str]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def record(self, block_id: str, method_name: str, role: MethodRole) -> None:
        self.invocations.append((block_id, method_name, role.value))


_ACTIVE_TRACE: ContextVar[ExecutionTrace | None] = ContextVar("chainlens_trace", default=None)


def current_trace() -> ExecutionTrace | None:
    return _ACTIVE_TRACE.get()


def emit_event(event: dict) -> None:
    """Append a control event to the active trace, if any."""
    trace = _ACTIVE_TRACE.get()
    if trace is not None:
        trace.events.append(event)


@contextmanager
def active_trace(trace: ExecutionTrace) -> Iterator[ExecutionTrace]:
    token = _ACTIVE_TRACE.set(trace)
    try:
        yield trace
    finally:
        _ACTIVE_TRACE.reset(token)


# --- execution ------------------------------------------------------------------------


@dataclass
class RoutingPlan:
    """Produced by a splitter block; consumed by the parallel group right after it.

    ``values`` maps branch indices to their inputs; branches missing from it
    are skipped and show up as absent (None) outputs in the fan-in. When
    ``values`` is None, every branch receives ``broadcast``.
    """

    values: dict[int, Any] | None
    broadcast: Any = None

    def value_for(self, index: int) -> Any:
        return self.broadcast if self.values is None else self.values[index]

    def __contains__(self, index: int) -> bool:
        return self.values is None or index in self.values


def _invoke_stage(handle: BlockHandle, descriptor: MethodDescriptor, value: TypedValue, trace: ExecutionTrace | None) -> TypedValue:
    if isinstance(value.payload, RoutingPlan):
        raise TypeMismatch(
            descriptor.name,
            descriptor.params[0].name if descriptor.params else "input",
            f"a splitter routing plan reached method '{descriptor.name}'; splitters must "
            "immediately precede a parallel group",
        )
    if descriptor.params:
        first = descriptor.params[0]
        if not accepts_value(first.type, value):
            raise TypeMismatch(
                descriptor.name,
                first.name,
                f"stage input of type '{value.data_type}' does not match parameter "
                f"'{first.name}' ({first.type}) of method '{descriptor.name}'",
            )
    if trace is not None:  # record at invocation time so aborted calls still show
        trace.record(handle.id, descriptor.name, descriptor.role)
    result = descriptor.fn(value.payload) if descriptor.params else descriptor.fn()
    return TypedValue.wrap(result, descriptor.returns)


def _execute(node: RunnableNode, value: TypedValue, mode: str, trace: ExecutionTrace | None) -> TypedValue:
    if isinstance(node, Block):
        handle = node.handle
        if mode == "predict":
            descriptor = handle.predict_method or handle.transform_method
        else:
            descriptor = handle.transform_method
        if descriptor is None:
            return value  # pass-through, lets pure-control blocks sit in a chain
        return _invoke_stage(handle, descriptor, value, trace)
    if isinstance(node, Chain):
        intermediate = _execute(node.left, value, mode, trace)
        return _execute(node.right, intermediate, mode, trace)
    if isinstance(node, Parallel):
        plan = value.payload if isinstance(value.payload, RoutingPlan) else None
        outputs: list[Any] = []
        for index, branch in enumerate(node.branches):
            if plan is not None and index not in plan:
                outputs.append(None)
                continue
            branch_in = value if plan is None else TypedValue.wrap(plan.value_for(index))
            outputs.append(_execute(branch, branch_in, mode, trace).payload)
        tag = "table" if any(isinstance(o, (dict, list)) for o in outputs) else "vector"
        return TypedValue(tag, outputs)
    raise TypeError(f"not a runnable: {node!r}")


def run_predict(node: RunnableNode | BlockHandle, value: Any, *, trace: ExecutionTrace | None = None) -> TypedValue:
    """Route a value through every Predict-role method of the tree.

    Blocks without a Predict method fall back to their Transform method, and
    blocks with neither pass the value through unchanged. Parallel groups
    fan the same input out to every branch (or follow the routing plan of an
    immediately preceding splitter) and collect outputs in declaration order.
    """
    return _execute(as_node(node), TypedValue.wrap(value), "predict", trace)


def run_transform(node: RunnableNode | BlockHandle, value: Any, *, trace: ExecutionTrace | None = None) -> TypedValue:
    """Apply only Transform-role methods in chain order, skipping Predicts."""
    node = as_node(node)
    if not any(h.transform_method for h in flatten(node)):
        raise NoTransformMethod("no transform-role method anywhere in the target")
    return _execute(node, TypedValue.wrap(value), "transform", trace)


# --- update propagation -----------------------------------------------------------------


@dataclass
class UpdateReport:
    """What an update sweep touched downstream of the originating block."""

    origin: str
    visited: list[tuple[str, str]] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "origin": self.origin,
            "visited": [{"block": b, "method": m} for b, m in self.visited],
            "errors": [{"block": b, "message": m} for b, m in self.errors],
        }


def propagate_update(node: RunnableNode | BlockHandle, origin: str) -> UpdateReport:
    """Invoke every Update-role method of every block strictly downstream of
    ``origin`` (flattened order), once each, recording failures instead of
    aborting. Update methods with required parameters cannot be auto-invoked
    and are recorded as errors.
    """
    order = flatten(node)
    ids = [h.id for h in order]
    if origin not in ids:
        raise UnknownBlock(f"origin block '{origin}' is not part of the pipeline")
    report = UpdateReport(origin=origin)
    for handle in order[ids.index(origin) + 1 :]:
        for descriptor in handle.methods:
            if descriptor.role != MethodRole.UPDATE:
                continue
            if any(p.required for p in descriptor.params):
                report.errors.append(
                    (handle.id, f"{descriptor.name}: requires arguments; not auto-invoked")
                )
                continue
            report.visited.append((handle.id, descriptor.name))
            try:
                descriptor.fn()
            except Exception as exc:  # record-and-continue by contract
                report.errors.append((handle.id, f"{descriptor.name}: {exc}"))
    return report


# --- structure serialization ---------------------------------------------------------------


def _method_doc(descriptor: MethodDescriptor) -> dict:
    return {
        "name": descriptor.name,
        "role": descriptor.role.value,
        "params": [
            {"name": p.name, "type": p.type, "required": p.required} for p in descriptor.params
        ],
        "returns": descriptor.returns,
        "description": descriptor.description,
    }


def serialize_structure(node: RunnableNode | BlockHandle) -> dict:
    """Nested document mirroring the tree; chain spines are flattened so the
    two associations of the same pipeline serialize identically."""
    node = as_node(node)
    if isinstance(node, Block):
        handle = node.handle
        return {
            "kind": "block",
            "id": handle.id,
            "display_name": handle.display_name,
            "block_kind": handle.kind,
            "methods": [_method_doc(m) for m in handle.methods],
        }
    if isinstance(node, Chain):
        children: list[dict] = []

        def walk(n: RunnableNode) -> None:
            if isinstance(n, Chain):
                walk(n.left)
                walk(n.right)
            else:
                children.append(serialize_structure(n))

        walk(node)
        return {"kind": "chain", "children": children}
    return {"kind": "parallel", "branches": [serialize_structure(b) for b in node.branches]}


def structure_json(node: RunnableNode | BlockHandle) -> str:
    return jsonutil.dumps(serialize_structure(node))


# --- direct method invocation -----------------------------------------------------------------


def coerce_args(descriptor: MethodDescriptor, args: Mapping[str, Any]) -> dict[str, Any]:
    known = {p.name for p in descriptor.params}
    for key in args:
        if key not in known:
            raise TypeMismatch(descriptor.name, key, f"unknown parameter '{key}' for method '{descriptor.name}'")
    out: dict[str, Any] = {}
    for param in descriptor.params:
        if param.name in args:
            out[param.name] = check_param(descriptor.name, param.name, param.type, args[param.name])
        elif param.required:
            raise TypeMismatch(descriptor.name, param.name, f"missing required parameter '{param.name}'")
        else:
            out[param.name] = param.default
    return out


def invoke_method(
    registry: Registry, block_id: str, method_name: str, args: Mapping[str, Any] | None = None
) -> tuple[TypedValue, bool]:
    """Invoke a method by name with named arguments.

    Returns the wrapped result and whether the call mutated state (CRUD
    roles); mutating calls are expected to be followed by an update sweep
    (the :class:`Pipeline` wrapper does this automatically).
    """
    handle = registry.get(block_id)
    descriptor = handle.method(method_name)
    kwargs = coerce_args(descriptor, args or {})
    result = descriptor.fn(**kwargs)
    trace = current_trace()
    if trace is not None:
        trace.record(handle.id, descriptor.name, descriptor.role)
    updated = descriptor.role in CRUD_ROLES
    return TypedValue.wrap(result, descriptor.returns), updated


# --- shutdown state, locking, pipeline ------------------------------------------------------------


@dataclass
class ShutdownState:
    """Emergency-stop flag; while active every predict on the pipeline errors."""

    active: bool = False
    reason: str = ""
    since: float | None = None

    def trip(self, reason: str = "") -> None:
        if not self.active:  # idempotent
            self.active = True
            self.reason = reason
            self.since = time.time()

    def reset(self) -> None:
        self.active = False
        self.reason = ""
        self.since = None

    def to_payload(self) -> dict:
        return {"active": self.active, "reason": self.reason}


class RWLock:
    """Many concurrent readers or one exclusive writer.

    Writers are preferred (new readers queue behind a waiting writer) so a
    steady stream of predictions cannot starve an update. Read sections are
    reentrant per thread, which long-running explainers rely on when they
    re-enter predict for every perturbed sample.
    """

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0
        self._local = threading.local()

    @contextmanager
    def read(self) -> Iterator[None]:
        depth = getattr(self._local, "depth", 0)
        if depth:
            self._local.depth = depth + 1
            try:
                yield
            finally:
                self._local.depth -= 1
            return
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1
        self._local.depth = 1
        try:
            yield
        finally:
            self._local.depth = 0
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class Pipeline:
    """A bound runnable tree plus the shared state the API layer serves.

    Reads (predict, transform, explain, serialize) run concurrently under a
    shared lock; CRUD invocations and their propagation sweep run as one
    exclusive section.
    """

    def __init__(self, root: RunnableNode | BlockHandle, registry: Registry):
        self.root = as_node(root)
        self.registry = registry
        self.shutdown = ShutdownState()
        self.lock = RWLock()
        self._bound = False

    # -- wiring --

    def bind(self) -> "Pipeline":
        from .errors import InvalidConfig

        for handle in flatten(self.root):
            # chain coupling binds the stage value to the first parameter, so
            # any further parameters must carry defaults
            for descriptor in (handle.predict_method, handle.transform_method):
                if descriptor is None:
                    continue
                extra = [p.name for p in descriptor.params[1:] if p.required]
                if extra:
                    raise InvalidConfig(
                        f"method '{descriptor.name}' of block '{handle.id}' cannot be "
                        f"chain-coupled: parameter(s) {extra} need defaults"
                    )
            owner = handle.owner
            if owner is not None and hasattr(owner, "bind_to_pipeline"):
                owner.bind_to_pipeline(self)
        self._bound = True
        return self

    def owners(self) -> list[Any]:
        return [h.owner for h in flatten(self.root) if h.owner is not None]

    def handle(self, block_id: str) -> BlockHandle:
        return self.registry.get(block_id)

    def contains(self, block_id: str) -> bool:
        return any(h.id == block_id for h in flatten(self.root))

    # -- reads --

    def predict(
        self, value: Any, node: RunnableNode | BlockHandle | None = None
    ) -> tuple[TypedValue, ExecutionTrace]:
        if self.shutdown.active:
            raise ShutdownActive(self.shutdown.reason)
        trace = ExecutionTrace()
        try:
            with self.lock.read(), active_trace(trace):
                result = run_predict(node if node is not None else self.root, value, trace=trace)
        except RejectedByFilter as exc:
            exc.events = list(trace.events)  # let callers surface fired events
            raise
        return result, trace

    def transform(
        self, value: Any, node: RunnableNode | BlockHandle | None = None
    ) -> tuple[TypedValue, ExecutionTrace]:
        trace = ExecutionTrace()
        with self.lock.read(), active_trace(trace):
            result = run_transform(node if node is not None else self.root, value, trace=trace)
        return result, trace

    def serialize(self) -> dict:
        with self.lock.read():
            return serialize_structure(self.root)

    # -- writes --

    def invoke(
        self, block_id: str, method_name: str, args: Mapping[str, Any] | None = None
    ) -> tuple[TypedValue, bool, ExecutionTrace, UpdateReport | None]:
        handle = self.registry.get(block_id)
        descriptor = handle.method(method_name)
        if descriptor.role == MethodRole.PREDICT and self.shutdown.active:
            raise ShutdownActive(self.shutdown.reason)
        trace = ExecutionTrace()
        mutating = descriptor.role in CRUD_ROLES
        guard = self.lock.write() if mutating else self.lock.read()
        with guard, active_trace(trace):
            value, updated = invoke_method(self.registry, block_id, method_name, args)
            report: UpdateReport | None = None
            if updated and self.contains(block_id):
                report = propagate_update(self.root, block_id)
                trace.events.append({"type": "update_propagation", **report.to_payload()})
        return value, updated, trace, report

    # -- bookkeeping --

    def state_fingerprint(self) -> str:
        """Hash of all mutable state, for purity/staleness checks."""
        parts: list[Any] = [self.shutdown.to_payload()]
        for handle in flatten(self.root):
            owner = handle.owner
            if owner is not None and hasattr(owner, "state_items"):
                parts.append({handle.id: owner.state_items()})
        digest = hashlib.sha256(jsonutil.dump_bytes(parts, sort_keys=True))
        return digest.hexdigest()
