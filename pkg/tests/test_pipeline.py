import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlens import (
    Block,
    MethodRole,
    Param,
    Registry,
    compose_parallel,
    compose_sequential,
    flatten,
    invoke_method,
    method,
    parallel,
    propagate_update,
    run_predict,
    run_transform,
    serialize_structure,
)
from chainlens.errors import (
    DuplicateBlockInChain,
    DuplicateMethodName,
    MultiplePredictMethods,
    NoTransformMethod,
    ShutdownActive,
    TooFewBranches,
    TypeMismatch,
    UnknownBlock,
)
from chainlens.pipeline import ExecutionTrace, structure_json

from conftest import build_threshold_pipeline


def identity_block(registry, name):
    return registry.register_block(
        name, "test",
        [method("ident", MethodRole.TRANSFORM, lambda x: x, [Param("x", "number")], "scalar")],
    )


def constant_block(registry, name, value):
    return registry.register_block(
        name, "test", [method("emit", MethodRole.PREDICT, lambda: value, [], "scalar")]
    )


def passthrough_block(registry, name):
    return registry.register_block(name, "test", [method("info", MethodRole.READ, dict, [], "structure")])


def update_block(registry, name, log):
    return registry.register_block(
        name, "test",
        [method("refresh", MethodRole.UPDATE, lambda: log.append(name), [], "structure")],
    )


class TestRegisterBlock:
    def test_direct_registration(self):
        registry = Registry()
        handle = registry.register_block(
            "LoanModel", "model",
            [
                method("predict", MethodRole.PREDICT, lambda row: row, [Param("row", "row")]),
                method("retrain", MethodRole.UPDATE, dict, []),
            ],
        )
        assert handle.id == "loanmodel"
        assert len(handle.methods) == 2
        assert registry.get("loanmodel") is handle

    def test_duplicate_method_name(self):
        registry = Registry()
        with pytest.raises(DuplicateMethodName):
            registry.register_block(
                "M", "model",
                [method("predict", MethodRole.PREDICT, lambda: 0),
                 method("predict", MethodRole.READ, lambda: 0)],
            )

    def test_crud_only_block(self):
        registry = Registry()
        handle = registry.register_block(
            "Dataset", "dataset",
            [method("get_rows", MethodRole.READ, list, []),
             method("edit", MethodRole.UPDATE, dict, [])],
        )
        assert handle.predict_method is None
        assert handle.transform_method is None

    def test_multiple_predict_methods_rejected(self):
        registry = Registry()
        with pytest.raises(MultiplePredictMethods):
            registry.register_block(
                "M", "model",
                [method("p1", MethodRole.PREDICT, lambda: 0),
                 method("p2", MethodRole.PREDICT, lambda: 0)],
            )

    def test_id_collision_gets_suffix(self):
        registry = Registry()
        first = registry.register_block("Same Name", "test", [])
        second = registry.register_block("Same Name", "test", [])
        assert first.id == "same-name"
        assert second.id == "same-name-2"


class TestCompose:
    def test_sequential_flatten(self):
        registry = Registry()
        a, b = identity_block(registry, "a"), identity_block(registry, "b")
        chain = compose_sequential(a, b)
        assert [h.id for h in flatten(chain)] == ["a", "b"]

    def test_associative_flatten(self):
        registry = Registry()
        a, b, c = (identity_block(registry, n) for n in "abc")
        left = compose_sequential(compose_sequential(a, b), c)
        right = compose_sequential(a, compose_sequential(b, c))
        assert [h.id for h in flatten(left)] == [h.id for h in flatten(right)] == ["a", "b", "c"]

    def test_duplicate_block_rejected(self):
        registry = Registry()
        a = identity_block(registry, "a")
        with pytest.raises(DuplicateBlockInChain):
            compose_sequential(a, a)

    def test_parallel_order_preserved(self):
        registry = Registry()
        a, b = identity_block(registry, "a"), identity_block(registry, "b")
        node = compose_parallel([a, b])
        assert [h.id for h in flatten(node)] == ["a", "b"]

    def test_parallel_too_few(self):
        registry = Registry()
        a = identity_block(registry, "a")
        with pytest.raises(TooFewBranches):
            compose_parallel([a])

    def test_parallel_nested_chain_branch(self):
        registry = Registry()
        a, b, c = (identity_block(registry, n) for n in "abc")
        node = compose_parallel([compose_sequential(a, b), c])
        assert [h.id for h in flatten(node)] == ["a", "b", "c"]


class TestRunPredict:
    def test_identity_chain(self):
        registry = Registry()
        chain = identity_block(registry, "a") | identity_block(registry, "b")
        assert run_predict(chain, 7).payload == 7

    def test_parallel_constants_declaration_order(self):
        registry = Registry()
        node = parallel(constant_block(registry, "zero", 0), constant_block(registry, "one", 1))
        result = run_predict(node, 99)
        assert result.payload == [0, 1]
        assert result.data_type == "vector"

    def test_threshold_chain_matches_direct_model_call(self, threshold_pipeline):
        pipeline, _, model_block = threshold_pipeline
        value, _ = pipeline.predict({"income": 6000.0})
        direct = model_block.predict({"income": 6000.0})
        assert value.payload["label"] == "approve"
        assert value.payload == direct

    def test_block_without_predict_is_passthrough(self):
        registry = Registry()
        chain = passthrough_block(registry, "noop") | identity_block(registry, "a")
        assert run_predict(chain, 3.5).payload == 3.5

    def test_predict_purity_no_crud_invoked(self):
        registry = Registry()
        calls = []
        handle = registry.register_block(
            "mixed", "test",
            [
                method("t", MethodRole.TRANSFORM, lambda x: x, [Param("x", "number")], "scalar"),
                method("boom", MethodRole.UPDATE, lambda: calls.append("boom"), []),
            ],
        )
        trace = ExecutionTrace()
        run_predict(Block(handle), 1.0, trace=trace)
        assert calls == []
        assert all(role in ("predict", "transform") for _, _, role in trace.invocations)

    def test_shutdown_blocks_pipeline_predict(self, threshold_pipeline):
        pipeline, _, _ = threshold_pipeline
        pipeline.shutdown.trip("manual")
        with pytest.raises(ShutdownActive):
            pipeline.predict({"income": 6000.0})
        pipeline.shutdown.reset()
        value, _ = pipeline.predict({"income": 6000.0})
        assert value.payload["label"] == "approve"

    def test_type_mismatch_on_wrong_stage_input(self):
        registry = Registry()
        chain = identity_block(registry, "a") | identity_block(registry, "b")
        with pytest.raises(TypeMismatch):
            run_predict(chain, "not a number")


class TestRunTransform:
    def test_single_transform(self):
        registry = Registry()
        handle = registry.register_block(
            "inc", "test",
            [method("inc", MethodRole.TRANSFORM, lambda x: x + 1, [Param("x", "number")], "scalar")],
        )
        assert run_transform(Block(handle), 3).payload == 4

    def test_transform_skips_predict_methods(self):
        registry = Registry()
        handle = registry.register_block(
            "both", "test",
            [
                method("p", MethodRole.PREDICT, lambda x: 999, [Param("x", "number")], "scalar"),
                method("t", MethodRole.TRANSFORM, lambda x: x * 2, [Param("x", "number")], "scalar"),
            ],
        )
        assert run_transform(Block(handle), 4).payload == 8
        assert run_predict(Block(handle), 4).payload == 999

    def test_no_transform_method(self):
        registry = Registry()
        chain = constant_block(registry, "a", 0) | passthrough_block(registry, "b")
        with pytest.raises(NoTransformMethod):
            run_transform(chain, 1)


class TestPropagateUpdate:
    def test_downstream_only(self):
        registry = Registry()
        log = []
        a, b, c = (update_block(registry, n, log) for n in "abc")
        chain = a | b | c
        report = propagate_update(chain, "b")
        assert report.visited == [("c", "refresh")]
        assert log == ["c"]

    def test_origin_last_block_empty(self):
        registry = Registry()
        log = []
        chain = update_block(registry, "a", log) | update_block(registry, "b", log)
        report = propagate_update(chain, "b")
        assert report.visited == []
        assert report.errors == []

    def test_unknown_origin(self):
        registry = Registry()
        log = []
        chain = update_block(registry, "a", log) | update_block(registry, "b", log)
        with pytest.raises(UnknownBlock):
            propagate_update(chain, "zzz")

    def test_errors_recorded_without_aborting(self):
        registry = Registry()
        log = []

        def broken():
            raise RuntimeError("kaput")

        a = update_block(registry, "a", log)
        b = registry.register_block("b", "test", [method("u", MethodRole.UPDATE, broken, [])])
        c = update_block(registry, "c", log)
        report = propagate_update(a | b | c, "a")
        assert ("b", "u") in report.visited and ("c", "refresh") in report.visited
        assert len(report.errors) == 1 and report.errors[0][0] == "b"
        assert log == ["c"]

    def test_label_flip_retrains_downstream_model(self, threshold_ds):
        pipeline, dataset_block, model_block = build_threshold_pipeline(threshold_ds)
        probe = {"income": 6000.0}
        assert model_block.predict(probe)["label"] == "approve"
        flip = {"deny": "approve", "approve": "deny"}
        for i in range(len(threshold_ds.rows)):
            label = threshold_ds.rows[i][-1]
            threshold_ds.update_cell(i, "status", flip[label])
        report = propagate_update(pipeline.root, "dataset")
        assert ("model", "retrain") in report.visited
        assert model_block.predict(probe)["label"] == "deny"


class TestSerializeStructure:
    def test_block_document(self):
        registry = Registry()
        handle = identity_block(registry, "a")
        doc = serialize_structure(Block(handle))
        assert doc["kind"] == "block" and doc["id"] == "a"
        assert doc["methods"][0]["name"] == "ident"
        assert doc["methods"][0]["role"] == "transform"

    def test_chain_with_parallel_children(self):
        registry = Registry()
        a, b, c = (identity_block(registry, n) for n in "abc")
        doc = serialize_structure(a | parallel(b, c))
        assert doc["kind"] == "chain"
        assert doc["children"][1]["kind"] == "parallel"
        assert [br["id"] for br in doc["children"][1]["branches"]] == ["b", "c"]

    def test_serialize_deterministic_bytes(self):
        registry = Registry()
        a, b, c = (identity_block(registry, n) for n in "abc")
        node = a | (b | c)
        assert structure_json(node) == structure_json(node)

    def test_associations_serialize_identically(self):
        registry = Registry()
        a, b, c = (identity_block(registry, n) for n in "abc")
        registry2 = Registry()
        d, e, f = (identity_block(registry2, n) for n in "abc")
        left = (a | b) | c
        right = d | (e | f)
        assert structure_json(left) == structure_json(right)


class TestInvokeMethod:
    def test_read_not_updated(self):
        registry = Registry()
        registry.register_block("ds", "dataset", [method("get_rows", MethodRole.READ, lambda: [], [], "table")])
        value, updated = invoke_method(registry, "ds", "get_rows", {})
        assert updated is False
        assert value.data_type == "table"

    def test_update_flag_set(self):
        registry = Registry()
        registry.register_block("ds", "dataset", [method("edit", MethodRole.UPDATE, lambda: {"ok": True}, [])])
        _, updated = invoke_method(registry, "ds", "edit", {})
        assert updated is True

    def test_type_mismatch_names_parameter(self):
        registry = Registry()
        registry.register_block(
            "m", "model",
            [method("predict", MethodRole.PREDICT, lambda row: row, [Param("row", "row")])],
        )
        with pytest.raises(TypeMismatch) as err:
            invoke_method(registry, "m", "predict", {"row": "not an object"})
        assert err.value.param == "row"


# --- fuzzed properties -------------------------------------------------------------


@st.composite
def chain_lengths(draw):
    return draw(st.integers(min_value=3, max_value=8))


@given(chain_lengths(), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_fuzzed_chain_fold_equivalence(length, rnd):
    registry = Registry()
    handles = [identity_block(registry, f"b{i}") for i in range(length)]

    def fold_random(items):
        items = list(items)
        while len(items) > 1:
            i = rnd.randrange(len(items) - 1)
            items[i : i + 2] = [compose_sequential(items[i], items[i + 1])]
        return items[0]

    left = fold_random([Block(h) for h in handles])
    right = fold_random([Block(h) for h in handles])
    assert [h.id for h in flatten(left)] == [h.id for h in flatten(right)]
    assert structure_json(left) == structure_json(right)
    assert run_predict(left, 1.5).payload == run_predict(right, 1.5).payload == 1.5


@given(st.permutations(list(range(4))))
@settings(max_examples=24, deadline=None)
def test_fuzzed_parallel_permutation(order):
    registry = Registry()
    handles = [constant_block(registry, f"c{i}", float(i)) for i in range(4)]
    node = compose_parallel([handles[i] for i in order])
    assert run_predict(node, 0).payload == [float(i) for i in order]


@given(st.lists(st.booleans(), min_size=2, max_size=8), st.integers(min_value=0, max_value=7))
@settings(max_examples=60, deadline=None)
def test_fuzzed_propagation_soundness(has_update, origin_index):
    registry = Registry()
    log = []
    handles = []
    for i, flag in enumerate(has_update):
        if flag:
            handles.append(update_block(registry, f"u{i}", log))
        else:
            handles.append(passthrough_block(registry, f"p{i}"))
    node = Block(handles[0])
    for handle in handles[1:]:
        node = compose_sequential(node, handle)
    origin_index = origin_index % len(handles)
    origin = handles[origin_index].id
    report = propagate_update(node, origin)
    expected = [(h.id, "refresh") for h in handles[origin_index + 1 :] if h.predict_method is None
                and any(m.role == MethodRole.UPDATE for m in h.methods)]
    assert report.visited == expected
    assert [b for b, _ in report.visited] == log


class TestAggregatorTransformInChain:
    def test_majority_over_branch_votes_via_run_transform(self):
        from chainlens.blocks import AggregatorBlock

        registry = Registry()
        agg = AggregatorBlock(registry, block_id="agg", strategy="majority_vote")
        result = run_transform(Block(agg.handle), [[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        assert result.payload["label"] == 1  # modal argmax over [1, 0, 1]
