"""Acceptance suite: one test per shipping criterion, each at its stated
tolerance, printing one [PASS]/[FAIL] line per criterion (run with -s to see
them live)."""

import itertools
import math
import random
from contextlib import contextmanager

import numpy as np
import pytest
import jsonschema

from chainlens import (
    Block,
    Pipeline,
    Registry,
    TrainConfig,
    compose_parallel,
    compose_sequential,
    flatten,
    propagate_update,
    run_predict,
)
from chainlens.blocks import (
    CorrectionStore,
    DatasetBlock,
    FilterBlock,
    GuardBlock,
    ModelBlock,
    RuleSet,
    bias_apply,
    bias_submit_correction,
    bomb_monitor,
    guard_apply,
)
from chainlens.data import ColumnSchema, Dataset, encode
from chainlens.errors import RejectedByFilter, ShutdownActive
from chainlens.explain import (
    explain_counterfactual,
    explain_lime,
    explain_shap,
    rbf_kernel,
    select_criticisms,
    select_prototypes,
    target_from_pipeline,
)
from chainlens.jsonutil import dumps
from chainlens.models import logistic_objective, mlp_objective
from chainlens.pipeline import ExecutionTrace, MethodRole, Param, method, structure_json
from chainlens.rules import (
    Abs,
    And,
    Comparison,
    EvalContext,
    FieldRef,
    Mul,
    Not,
    NumberLit,
    Or,
    Override,
    Reject,
    Reset,
    RuleAst,
    Shutdown,
    TextLit,
    TotalAttribution,
    format_rule,
    parse_condition,
    parse_rule,
)
from chainlens.server import ENVELOPE_SCHEMA, ApiServer
from chainlens.values import payload_matches

from conftest import build_threshold_pipeline
from fixtures_loan import threshold_dataset
from test_explain_attr import numeric_target
from test_explain_sets import brute_force_criticisms, brute_force_prototypes, clustered_rows


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


# --- 1. composition algebra -----------------------------------------------------------


def test_acceptance_composition_algebra():
    with criterion("composition algebra: 1000 fuzzed trees, associativity + order + bytes"):
        for i in range(1000):
            rng = random.Random(i)
            n = rng.randint(2, 7)
            registry = Registry()
            handles = [
                registry.register_block(f"b{j}", "test", [
                    method("t", MethodRole.TRANSFORM, lambda x: x, [Param("x", "number")], "scalar")
                ])
                for j in range(n)
            ]

            def fold(seed):
                generator = random.Random(seed)
                items = [Block(h) for h in handles]
                while len(items) > 1:
                    k = generator.randrange(len(items) - 1)
                    items[k : k + 2] = [compose_sequential(items[k], items[k + 1])]
                return items[0]

            left, right = fold(i * 2 + 1), fold(i * 2 + 2)
            assert [h.id for h in flatten(left)] == [h.id for h in flatten(right)]
            assert structure_json(left) == structure_json(right)
            assert run_predict(left, 1.0).payload == run_predict(right, 1.0).payload == 1.0

            # parallel order preservation on a permutation of constant blocks
            k = rng.randint(2, 5)
            registry2 = Registry()
            constants = [
                registry2.register_block(f"c{j}", "test", [
                    method("emit", MethodRole.PREDICT, (lambda v: lambda: v)(float(j)), [], "scalar")
                ])
                for j in range(k)
            ]
            order = list(range(k))
            rng.shuffle(order)
            node = compose_parallel([constants[j] for j in order])
            assert run_predict(node, 0).payload == [float(j) for j in order]
            assert structure_json(node) == structure_json(node)


# --- 2. update propagation --------------------------------------------------------------


def test_acceptance_update_propagation():
    with criterion("update propagation: 100 fuzzed chains + label-flip probe via PUT"):
        for i in range(100):
            rng = random.Random(1000 + i)
            n = rng.randint(2, 8)
            registry = Registry()
            log = []
            handles = []
            for j in range(n):
                if rng.random() < 0.6:
                    handles.append(registry.register_block(f"u{j}", "test", [
                        method("refresh", MethodRole.UPDATE,
                               (lambda name: lambda: log.append(name))(f"u{j}"), [])
                    ]))
                else:
                    handles.append(registry.register_block(f"p{j}", "test", [
                        method("info", MethodRole.READ, dict, [])
                    ]))
            node = Block(handles[0])
            for handle in handles[1:]:
                node = compose_sequential(node, handle)
            origin_index = rng.randrange(n)
            log.clear()
            report = propagate_update(node, handles[origin_index].id)
            oracle = [
                (h.id, "refresh") for h in handles[origin_index + 1 :]
                if any(m.role == MethodRole.UPDATE for m in h.methods)
            ]
            assert report.visited == oracle
            assert log == [b for b, _ in oracle]

        # dataset label-flip fixture: probe prediction flips after PUT edits
        ds = threshold_dataset()
        pipeline, _, _ = build_threshold_pipeline(ds)
        server = ApiServer(pipeline)
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert status == 200 and env["value"]["label"] == "approve"
        flip = {"deny": "approve", "approve": "deny"}
        for i in range(len(ds.rows)):
            status, env = server.dispatch(
                "PUT", "/blocks/dataset/update_cell",
                {"row": i, "column": "status", "value": flip[ds.rows[i][-1]]},
            )
            assert status == 200 and env["updated"] is True
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert env["value"]["label"] == "deny"  # exact label tolerance


# --- 3. SHAP ---------------------------------------------------------------------------


def test_acceptance_shap():
    with criterion("SHAP: exact==bruteforce@1e-9, efficiency@1e-6 x500, sampled within 0.05"):
        rng = np.random.default_rng(42)

        def random_case(m):
            w = rng.normal(size=m)
            pair = rng.integers(0, m, size=2)

            def fn(row):
                vals = np.array([row[f"x{j}"] for j in range(m)])
                return float(w @ vals + 0.5 * vals[pair[0]] * vals[pair[1]])

            names = [f"x{j}" for j in range(m)]
            target = numeric_target(fn, names)
            instance = {n: float(v) for n, v in zip(names, rng.normal(size=m))}
            background = [
                {n: float(v) for n, v in zip(names, rng.normal(size=m))}
                for _ in range(int(rng.integers(1, 3)))
            ]
            return fn, names, target, instance, background

        # exact mode vs independent permutation-enumeration oracle, <=4 columns
        for _ in range(25):
            m = int(rng.integers(2, 5))
            fn, names, target, instance, background = random_case(m)
            att = explain_shap(target, instance, background=background, mode="exact")

            def value(subset):
                total = 0.0
                for bg in background:
                    hybrid = {n: (instance[n] if n in subset else bg[n]) for n in names}
                    total += fn(hybrid)
                return total / len(background)

            oracle = {n: 0.0 for n in names}
            perms = list(itertools.permutations(names))
            for perm in perms:
                seen = set()
                for name in perm:
                    before = value(seen)
                    seen.add(name)
                    oracle[name] += value(seen) - before
            for name in names:
                assert abs(att.values[name] - oracle[name] / len(perms)) <= 1e-9

        # efficiency on 500 fuzzed cases
        for _ in range(500):
            m = int(rng.integers(2, 5))
            _, _, target, instance, background = random_case(m)
            att = explain_shap(target, instance, background=background, mode="exact")
            assert abs(att.base_value + sum(att.values.values()) - att.prediction) <= 1e-6

        # sampled mode within 0.05 of exact on the 3-column fixture
        fn = lambda row: 0.2 * row["a"] - 0.5 * row["b"] + 0.3 * row["a"] * row["c"]
        target = numeric_target(fn, ["a", "b", "c"])
        instance = {"a": 1.0, "b": 1.0, "c": -1.0}
        background = [{"a": 0.0, "b": 0.5, "c": 0.5}]
        exact = explain_shap(target, instance, background=background, mode="exact")
        sampled = explain_shap(target, instance, background=background,
                               mode="sampled", samples=4096, seed=0)
        for name in ("a", "b", "c"):
            assert abs(sampled.values[name] - exact.values[name]) <= 0.05


# --- 4. LIME -----------------------------------------------------------------------------


def test_acceptance_lime():
    with criterion("LIME: dominant feature >=5x null (n=2000); constant predictor |phi|<=1e-6"):
        target = numeric_target(
            lambda row: 1.0 / (1.0 + math.exp(-3.0 * row["x1"] + 0.0 * row["x2"])), ["x1", "x2"]
        )
        att = explain_lime(target, {"x1": 0.0, "x2": 0.0}, n_samples=2000, seed=0)
        assert abs(att.values["x1"]) >= 5.0 * abs(att.values["x2"])

        constant = numeric_target(lambda row: 0.42, ["x1", "x2"])
        att = explain_lime(constant, {"x1": 0.0, "x2": 0.0}, n_samples=2000, seed=0)
        assert all(abs(v) <= 1e-6 for v in att.values.values())


# --- 5. counterfactuals -------------------------------------------------------------------


def test_acceptance_counterfactuals():
    with criterion("counterfactuals: 200 seeded searches, 100% valid, 0 immutable violations"):
        schema = [
            ColumnSchema("gender", "categorical", ("male", "female"),
                         mutable_for_counterfactuals=False, protected=True),
            ColumnSchema("income", "numeric"),
            ColumnSchema("status", "categorical", ("deny", "approve")),
        ]
        rows = []
        for i, income in enumerate(range(2000, 8000, 100)):
            rows.append((("male", "female")[i % 2], float(income),
                         "approve" if income >= 5000 else "deny"))
        ds = Dataset(schema, rows, "status")
        pipeline, _, _ = build_threshold_pipeline(ds)
        target = target_from_pipeline(pipeline, "chain")

        searched = returned = 0
        for i in range(200):
            rng = np.random.default_rng(i)
            income = float(rng.integers(2500, 4900))
            gender = ("male", "female")[i % 2]
            result = explain_counterfactual(
                target, {"gender": gender, "income": income},
                k=1, seed=i, max_iters=30, restarts=2,
            )
            searched += 1
            for cf in result.counterfactuals:
                returned += 1
                record = target.predict_record(cf.modified)
                assert record["label"] == "approve"  # 100% validity through the chain
                assert cf.modified["gender"] == gender  # immutable/protected untouched
        assert searched == 200
        assert returned >= 190  # searches on this separable fixture essentially always succeed

        # threshold fixture: within grid-oracle distance + one step
        simple, _, _ = build_threshold_pipeline(threshold_dataset())
        simple_target = target_from_pipeline(simple, "chain")
        result = explain_counterfactual(simple_target, {"income": 4000.0}, k=1, seed=0)
        assert result.counterfactuals
        cf = result.counterfactuals[0]
        income = 4000.0
        oracle = None
        while income <= 8000.0:
            if simple_target.predict_record({"income": income})["label"] == "approve":
                oracle = income
                break
            income += 10.0
        step_raw = 0.25 * simple_target.encoder.stds["income"]
        assert cf.modified["income"] <= oracle + step_raw


# --- 6. MMD-critic ---------------------------------------------------------------------------


def test_acceptance_mmd_critic():
    with criterion("MMD-critic: greedy == exhaustive brute force on all n<=12, k<=3 fixtures"):
        for seed in range(30):
            X = clustered_rows(seed)
            assert len(X) <= 12
            K = rbf_kernel(X, 1.0)
            for k in (1, 2, 3):
                assert sorted(select_prototypes(K, k)) == brute_force_prototypes(K, k)
            protos = select_prototypes(K, 2)
            for kc in (1, 2):
                if len(X) - 2 >= kc:
                    assert sorted(select_criticisms(K, protos, kc)) == brute_force_criticisms(
                        K, protos, kc
                    )
        # the two-cluster textbook fixture
        X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
        K = rbf_kernel(X, 1.0)
        protos = select_prototypes(K, 2)
        assert sorted(protos) == brute_force_prototypes(K, 2)
        assert {0 if X[p, 0] < 2.5 else 1 for p in protos} == {0, 1}


# --- 7. gradients ------------------------------------------------------------------------------


def test_acceptance_gradients():
    with criterion("gradients: analytic vs central differences rel err <= 1e-4, 50 instances"):
        rng = np.random.default_rng(7)

        def check(objective, flat):
            _, analytic = objective(flat)
            numeric = np.zeros_like(flat)
            for i in range(len(flat)):
                up = flat.copy(); up[i] += 1e-6
                down = flat.copy(); down[i] -= 1e-6
                numeric[i] = (objective(up)[0] - objective(down)[0]) / 2e-6
            scale = max(float(np.abs(numeric).max()), 1e-8)
            assert float(np.abs(analytic - numeric).max()) / scale <= 1e-4

        for i in range(25):
            n, d, k = int(rng.integers(3, 8)), int(rng.integers(1, 5)), int(rng.integers(2, 4))
            X = rng.normal(size=(n, d))
            Y = np.eye(k)[rng.integers(k, size=n)]
            check(logistic_objective(X, Y), rng.normal(scale=0.5, size=d * k + k))
        for i in range(25):
            n, d, h, k = int(rng.integers(3, 7)), int(rng.integers(1, 4)), int(rng.integers(2, 5)), 2
            X = rng.normal(size=(n, d))
            Y = np.eye(k)[rng.integers(k, size=n)]
            check(mlp_objective(X, Y, h), rng.normal(scale=0.5, size=d * h + h + h * k + k))


# --- 8. rule DSL ---------------------------------------------------------------------------------


def random_rule_ast(rng: random.Random) -> RuleAst:
    fields = ("income", "credit_history", "gender", "area_kind")

    def number_term(depth):
        choice = rng.randrange(6 if depth > 0 else 4)
        if choice == 0:
            return NumberLit(float(rng.randint(-10**6, 10**6)))
        if choice == 1:
            return NumberLit(round(rng.uniform(-1000, 1000), 4))
        if choice == 2:
            ns = rng.choice(("input", "attribution"))
            return FieldRef(ns, rng.choice(fields))
        if choice == 3:
            return TotalAttribution()
        if choice == 4:
            return Abs(number_term(depth - 1))
        return Mul(number_term(depth - 1), number_term(depth - 1))

    def comparison():
        if rng.random() < 0.25:
            text = "".join(rng.choice("abcdef '\\") for _ in range(rng.randrange(6)))
            return Comparison(TextLit(text), rng.choice(("==", "!=")), TextLit(text[::-1]))
        return Comparison(number_term(2), rng.choice(("==", "!=", "<", "<=", ">", ">=")),
                          number_term(2))

    def expr(depth):
        if depth == 0:
            return comparison()
        choice = rng.randrange(4)
        if choice == 0:
            return comparison()
        if choice == 1:
            return And(expr(depth - 1), expr(depth - 1))
        if choice == 2:
            return Or(expr(depth - 1), expr(depth - 1))
        return Not(expr(depth - 1))

    action = rng.choice([Override("approve"), Reject("bad input"), Shutdown(), Reset()])
    return RuleAst(expr(3), action)


def test_acceptance_rule_dsl():
    with criterion("rule DSL: parse(format(ast))==ast x1000, precedence, guard identity x500"):
        rng = random.Random(123)
        for _ in range(1000):
            ast = random_rule_ast(rng)
            assert parse_rule(format_rule(ast)) == ast

        # precedence golden tests
        ast = parse_condition("input.a == 1 OR input.b == 2 AND input.c == 3")
        assert isinstance(ast, Or) and isinstance(ast.right, And)
        ast = parse_condition("NOT input.a == 1 OR input.b == 2")
        assert isinstance(ast, Or) and isinstance(ast.left, Not)
        ast = parse_condition("(input.a == 1 OR input.b == 2) AND input.c == 3")
        assert isinstance(ast, And) and isinstance(ast.left, Or)

        # guard identity on 500 fuzzed predictions
        gen = np.random.default_rng(99)
        for _ in range(500):
            p = float(gen.uniform(0, 1))
            record = {
                "label": "approve" if gen.random() < 0.5 else "deny",
                "probabilities": [1 - p, p],
                "classes": ["deny", "approve"],
                "input": {"income": float(gen.uniform(0, 10000))},
            }
            assert guard_apply(RuleSet(), record["input"], record) == record


# --- 9. control semantics --------------------------------------------------------------------------


def test_acceptance_control_semantics():
    with criterion("control: shutdown totality, filter precedence, bias monotone, bomb reset"):
        ds = threshold_dataset()
        pipeline, _, model_block = build_threshold_pipeline(ds)
        # shutdown blocks 100% of predicts until reset
        pipeline.shutdown.trip("acceptance")
        blocked = 0
        for income in range(3000, 7000, 100):
            try:
                pipeline.predict({"income": float(income)})
            except ShutdownActive:
                blocked += 1
        assert blocked == 40
        pipeline.shutdown.reset()
        for income in range(3000, 7000, 100):
            pipeline.predict({"income": float(income)})

        # filter rejection prevents any downstream predict invocation
        registry = Registry()
        ds2 = threshold_dataset()
        dataset_block = DatasetBlock(ds2, registry)
        filt = FilterBlock(registry, block_id="filter",
                           rules=["WHEN input.income < 0 THEN REJECT('negative income')"])
        model2 = ModelBlock(ds2, "logistic", registry, block_id="model")
        chain = Pipeline(dataset_block.handle | filt.handle | model2.handle, registry).bind()
        trace = ExecutionTrace()
        with pytest.raises(RejectedByFilter):
            run_predict(chain.root, {"income": -10.0}, trace=trace)
        assert all(role != "predict" for _, _, role in trace.invocations)

        # bias_apply strictly increases p(desired|row)
        for kind in ("mlp", "logistic"):
            enc = encode(ds)
            from chainlens.models import predict_proba, train

            model = train(kind, ds, TrainConfig(seed=0, epochs=120), encoded=enc)
            row = {"income": 4100.0}
            before = predict_proba(model, enc.encode_row(row))[1]
            store = CorrectionStore()
            bias_submit_correction(store, row, "approve", model.classes)
            bias_apply(store, model, enc)
            after = predict_proba(model, enc.encode_row(row))[1]
            assert after > before

        # bomb Reset restores probe predictions exactly
        probes = [{"income": float(x)} for x in (3200, 4400, 5600, 6800)]
        baseline = [model_block.predict(p)["probabilities"] for p in probes]
        store = CorrectionStore()
        bias_submit_correction(store, {"income": 4000.0}, "approve", model_block.model.classes)
        bias_apply(store, model_block.model, model_block.encoder)
        assert [model_block.predict(p)["probabilities"] for p in probes] != baseline
        state = RuleSet(rules=[
            __import__("chainlens.blocks", fromlist=["RuleEntry"]).RuleEntry(
                parse_rule("WHEN output.probability >= 0 THEN RESET"))
        ])
        bomb_monitor(state, EvalContext(input={}, output={"label": "deny", "probability": 0.5}),
                     pipeline)
        assert [model_block.predict(p)["probabilities"] for p in probes] == baseline


# --- 10. API contract ---------------------------------------------------------------------------------


def test_acceptance_api_contract():
    with criterion("API: bijection, GET purity, verb golden table, envelope schema, statuses"):
        ds = threshold_dataset()
        registry = Registry()
        dataset_block = DatasetBlock(ds, registry)
        filt = FilterBlock(registry, block_id="filter",
                           rules=["WHEN input.income < 0 THEN REJECT('negative income')"])
        model_block = ModelBlock(ds, "logistic", registry, block_id="model",
                                 config=TrainConfig(seed=0))
        guard = GuardBlock(registry, block_id="guard")
        pipeline = Pipeline(
            dataset_block.handle | filt.handle | model_block.handle | guard.handle, registry
        ).bind()
        model_block.ensure_trained()
        server = ApiServer(pipeline)

        # bijection: every method has exactly one route, each (verb, path) unique
        declared = sorted(
            (h.id, m.name) for h in flatten(pipeline.root) for m in h.methods
        )
        method_routes = sorted(
            (r.block_id, r.method_name) for r in server.table.routes if r.kind == "method"
        )
        assert declared == method_routes
        assert len({(r.verb, r.path) for r in server.table.routes}) == len(server.table.routes)
        assert len(server.tools) == len(server.table.routes)

        # verb mapping golden table
        verb_for = {"create": "POST", "read": "GET", "update": "PUT", "delete": "DELETE",
                    "predict": "POST", "transform": "POST"}
        for route in server.table.routes:
            if route.kind != "method":
                continue
            role = pipeline.registry.get(route.block_id).method(route.method_name).role
            assert route.verb == verb_for[role.value]

        # GET purity: state hash unchanged by any GET route
        before = pipeline.state_fingerprint()
        for route in server.table.routes:
            if route.verb != "GET":
                continue
            status, _ = server.dispatch("GET", route.path, None,
                                        {"limit": "2"} if route.path.endswith("get_rows") else {})
            assert status == 200
            assert pipeline.state_fingerprint() == before, route.path

        # envelope schema on every 200
        successes = [
            ("GET", "/chain", None, None),
            ("POST", "/chain/predict", {"input": {"income": 6000.0}}, None),
            ("GET", "/blocks/dataset/get_rows", None, {"limit": "2"}),
            ("GET", "/blocks/model/describe", None, None),
            ("GET", "/tools", None, None),
            ("POST", "/blocks/guard/add_rule",
             {"rule": "WHEN input.income >= 50000 THEN OVERRIDE('approve')"}, None),
            ("GET", "/blocks/guard/rules", None, None),
            ("PUT", "/blocks/guard/set_rule_active", {"index": 0, "active": False}, None),
            ("POST", "/explain/shap",
             {"instance": {"income": 4500.0}, "params": {"background": [{"income": 4000.0}]}}, None),
        ]
        for verb, path, body, query in successes:
            status, env = server.dispatch(verb, path, body, query)
            assert status == 200, (verb, path, env)
            jsonschema.validate(env, ENVELOPE_SCHEMA)
            assert payload_matches(env["data_type"], env["value"])

        # error statuses
        assert server.dispatch("GET", "/missing")[0] == 404
        status, body = server.dispatch("POST", "/chain/predict", {"input": {"income": "abc"}})
        assert status == 400 and body["error"]["param"] == "income"
        server.dispatch("POST", "/shutdown", {"reason": "x"})
        assert server.dispatch("POST", "/chain/predict", {"input": {"income": 1.0}})[0] == 409
        server.dispatch("DELETE", "/shutdown")
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": -2.0}})
        assert status == 422 and env["value"]["rejected"] is True


# --- 11. agent bridge ------------------------------------------------------------------------------------


def test_acceptance_agent_bridge():
    with criterion("agent bridge: tool envelopes == HTTP envelopes; budget enforced"):
        from chainlens.agent import converse, execute_tool, scripted_backend

        pipeline, _, _ = build_threshold_pipeline(threshold_dataset())
        server = ApiServer(pipeline)

        calls = [
            ("chain_structure", {}, ("GET", "/chain", None, None)),
            ("chain_predict", {"input": {"income": 5500.0}},
             ("POST", "/chain/predict", {"input": {"income": 5500.0}}, None)),
            ("dataset_get_schema", {}, ("GET", "/blocks/dataset/get_schema", None, None)),
            ("model_describe", {}, ("GET", "/blocks/model/describe", None, None)),
        ]
        for tool, args, (verb, path, body, query) in calls:
            via_tool = execute_tool(pipeline, server.table, tool, args)
            status, envelope = server.dispatch(verb, path, body, query)
            assert via_tool["status"] == status
            assert dumps(via_tool["body"]) == dumps(envelope)

        looping = scripted_backend([
            {"match": ".*", "respond": [{"tool": "chain_structure", "args": {}}]},
        ])
        for budget in (0, 1, 4):
            turns = converse(pipeline, server.table, looping, [], "inspect", max_tool_calls=budget)
            assert sum(1 for t in turns if t.tool_call is not None) == budget
