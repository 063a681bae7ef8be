import threading

import jsonschema
import pytest

from chainlens import Pipeline, Registry, TrainConfig
from chainlens.blocks import (
    AggregatorBlock,
    DatasetBlock,
    FilterBlock,
    ModelBlock,
)
from chainlens.jsonutil import dumps
from chainlens.pipeline import parallel
from chainlens.server import ENVELOPE_SCHEMA, ApiServer, build_routes, create_app
from chainlens.values import payload_matches

from conftest import build_threshold_pipeline
from fixtures_loan import threshold_dataset


@pytest.fixture()
def server(threshold_ds):
    pipeline, _, _ = build_threshold_pipeline(threshold_ds)
    return ApiServer(pipeline)


class TestBuildRoutes:
    def test_verb_mapping_for_model_block(self, server):
        verbs = {(r.verb, r.path) for r in server.table.routes}
        assert ("POST", "/blocks/model/predict") in verbs
        assert ("PUT", "/blocks/model/retrain") in verbs
        assert ("GET", "/blocks/model/describe") in verbs

    def test_verb_mapping_golden_table(self, server):
        role_verbs = {}
        for route in server.table.routes:
            if route.kind != "method":
                continue
            handle = server.pipeline.registry.get(route.block_id)
            role = handle.method(route.method_name).role
            role_verbs.setdefault(role.value, set()).add(route.verb)
        assert role_verbs["read"] == {"GET"}
        assert role_verbs["create"] == {"POST"}
        assert role_verbs["update"] == {"PUT"}
        assert role_verbs["delete"] == {"DELETE"}
        assert role_verbs["predict"] == {"POST"}

    def test_chain_route_always_present(self, server):
        assert server.table.lookup("GET", "/chain") is not None

    def test_same_method_name_distinct_paths(self, threshold_ds):
        registry = Registry()
        dataset_block = DatasetBlock(threshold_ds, registry)
        m1 = ModelBlock(threshold_ds, "logistic", registry, block_id="m1")
        m2 = ModelBlock(threshold_ds, "logistic", registry, block_id="m2")
        agg = AggregatorBlock(registry, block_id="agg")
        pipeline = Pipeline(
            dataset_block.handle | parallel(m1.handle, m2.handle) | agg.handle, registry
        ).bind()
        table = build_routes(pipeline)
        paths = [r.path for r in table.routes if r.method_name == "predict"]
        assert paths == ["/blocks/m1/predict", "/blocks/m2/predict"]

    def test_route_method_bijection(self, server):
        method_routes = [r for r in server.table.routes if r.kind == "method"]
        declared = []
        from chainlens.pipeline import flatten

        for handle in flatten(server.pipeline.root):
            for descriptor in handle.methods:
                declared.append((handle.id, descriptor.name))
        assert sorted((r.block_id, r.method_name) for r in method_routes) == sorted(declared)
        assert len({(r.verb, r.path) for r in server.table.routes}) == len(server.table.routes)

    def test_deterministic_for_equal_pipelines(self, threshold_ds):
        p1, _, _ = build_threshold_pipeline(threshold_dataset())
        p2, _, _ = build_threshold_pipeline(threshold_dataset())
        t1 = [(r.verb, r.path, r.tool_name) for r in build_routes(p1).routes]
        t2 = [(r.verb, r.path, r.tool_name) for r in build_routes(p2).routes]
        assert t1 == t2


class TestDispatch:
    def test_edit_propagates_and_flips_probe(self, server):
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert status == 200 and env["value"]["label"] == "approve"
        flip = {"deny": "approve", "approve": "deny"}
        ds = server.pipeline.registry.get("dataset").owner.dataset
        for i in range(len(ds.rows)):
            status, env = server.dispatch(
                "PUT", "/blocks/dataset/update_cell",
                {"row": i, "column": "status", "value": flip[ds.rows[i][-1]]},
            )
            assert status == 200 and env["updated"] is True
        assert any(e["type"] == "update_propagation" for e in env["events"])
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert env["value"]["label"] == "deny"

    def test_predict_during_shutdown_409(self, server):
        server.dispatch("POST", "/shutdown", {"reason": "halt"})
        status, body = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert status == 409
        assert body["error"]["type"] == "ShutdownActive"
        status, _ = server.dispatch("DELETE", "/shutdown")
        assert status == 200
        status, _ = server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        assert status == 200

    def test_bad_number_names_parameter(self, server):
        status, body = server.dispatch("POST", "/chain/predict", {"input": {"income": "abc"}})
        assert status == 400
        assert body["error"]["type"] == "TypeMismatch"
        assert body["error"]["param"] == "income"

    def test_direct_model_predict_bad_cell_names_column(self, server):
        status, body = server.dispatch("POST", "/blocks/model/predict", {"row": {"income": "abc"}})
        assert status == 400
        assert body["error"]["type"] == "TypeMismatch"
        assert body["error"]["param"] == "income"

    def test_unknown_route_404(self, server):
        status, body = server.dispatch("GET", "/nope")
        assert status == 404

    def test_rejection_422_with_envelope(self, threshold_ds):
        registry = Registry()
        dataset_block = DatasetBlock(threshold_ds, registry)
        filt = FilterBlock(registry, block_id="filter",
                           rules=["WHEN input.income < 0 THEN REJECT('negative income')"])
        model = ModelBlock(threshold_ds, "logistic", registry, block_id="model")
        pipeline = Pipeline(dataset_block.handle | filt.handle | model.handle, registry).bind()
        server = ApiServer(pipeline)
        status, env = server.dispatch("POST", "/chain/predict", {"input": {"income": -1.0}})
        assert status == 422
        assert env["value"]["rejected"] is True
        assert env["value"]["message"] == "negative income"
        assert env["events"][0]["type"] == "rejected"

    def test_get_with_query_params(self, server):
        status, env = server.dispatch("GET", "/blocks/dataset/get_rows", None, {"limit": "2"})
        assert status == 200
        assert len(env["value"]) == 2

    def test_envelope_schema_on_success_responses(self, server):
        calls = [
            ("GET", "/chain", None, None),
            ("POST", "/chain/predict", {"input": {"income": 6000.0}}, None),
            ("GET", "/blocks/dataset/get_rows", None, {"limit": "3"}),
            ("GET", "/blocks/dataset/get_schema", None, None),
            ("GET", "/blocks/model/describe", None, None),
            ("GET", "/tools", None, None),
            ("PUT", "/blocks/dataset/update_cell",
             {"row": 0, "column": "income", "value": "3050"}, None),
            ("POST", "/explain/whatif",
             {"instance": {"income": 4000.0}, "params": {"edits": {"income": 6000.0}}}, None),
        ]
        for verb, path, body, query in calls:
            status, env = server.dispatch(verb, path, body, query)
            assert status == 200, (verb, path, env)
            jsonschema.validate(env, ENVELOPE_SCHEMA)
            assert payload_matches(env["data_type"], env["value"]), (path, env["data_type"])

    def test_get_purity(self, server):
        server.dispatch("POST", "/chain/predict", {"input": {"income": 6000.0}})
        before = server.pipeline.state_fingerprint()
        for route in server.table.routes:
            if route.verb != "GET":
                continue
            query = {}
            if route.path.endswith("get_rows"):
                query = {"limit": "3"}
            status, _ = server.dispatch("GET", route.path, None, query)
            assert status == 200
            assert server.pipeline.state_fingerprint() == before, route.path

    def test_explain_routes_all_kinds(self, server):
        instance = {"income": 4500.0}
        bodies = {
            "lime": {"instance": instance, "params": {"n_samples": 100, "seed": 0}},
            "shap": {"instance": instance, "params": {"background": [{"income": 4000.0}]}},
            "whatif": {"instance": instance, "params": {"edits": {"income": 6000.0}}},
            "counterfactual": {"instance": instance, "params": {"k": 1, "seed": 0}},
            "prototypes": {"params": {"k_prototypes": 2, "k_criticisms": 1}},
            "examples": {"instance": instance, "params": {"k": 3}},
        }
        expected_types = {
            "lime": "attribution", "shap": "attribution", "whatif": "structure",
            "counterfactual": "structure", "prototypes": "structure", "examples": "table",
        }
        before = server.pipeline.state_fingerprint()
        for kind, body in bodies.items():
            status, env = server.dispatch("POST", f"/explain/{kind}", body)
            assert status == 200, (kind, env)
            assert env["data_type"] == expected_types[kind]
            # explainers are read-only with respect to pipeline state
            assert server.pipeline.state_fingerprint() == before, kind


class TestToolSchemas:
    def test_tool_count_equals_route_count(self, server):
        assert len(server.tools) == len(server.table.routes)

    def test_model_predict_tool(self, server):
        tool = next(t for t in server.tools if t["name"] == "model_predict")
        assert tool["parameters"]["properties"]["row"]["type"] == "object"
        assert "row" in tool["parameters"]["required"]

    def test_descriptions_nonempty(self, server):
        assert all(t["description"] for t in server.tools)

    def test_names_unique(self, server):
        names = [t["name"] for t in server.tools]
        assert len(set(names)) == len(names)


class TestHttpAdapter:
    def make_client(self, server):
        from fastapi.testclient import TestClient

        return TestClient(create_app(server))

    def test_roundtrip_over_asgi(self, server):
        with self.make_client(server) as client:
            response = client.get("/chain")
            assert response.status_code == 200
            doc = response.json()
            assert doc["value"]["kind"] == "chain"
            response = client.post("/chain/predict", json={"input": {"income": 6000.0}})
            assert response.json()["value"]["label"] == "approve"

    def test_http_equals_direct_dispatch_bytes(self, server):
        _, env = server.dispatch("GET", "/chain")
        with self.make_client(server) as client:
            response = client.get("/chain")
        assert response.content == dumps(env).encode()

    def test_invalid_json_body_400(self, server):
        with self.make_client(server) as client:
            response = client.post(
                "/chain/predict", content=b"{nope", headers={"content-type": "application/json"}
            )
            assert response.status_code == 400

    def test_http_status_mapping(self, server):
        with self.make_client(server) as client:
            assert client.get("/nothing/here").status_code == 404
            assert client.post("/chain/predict", json={"input": {"income": "abc"}}).status_code == 400
            client.post("/shutdown", json={"reason": "x"})
            assert client.post("/chain/predict", json={"input": {"income": 1.0}}).status_code == 409
            client.delete("/shutdown")


class TestMutationAtomicity:
    def test_predicts_see_old_or_new_state_never_mixed(self):
        ds = threshold_dataset()
        registry = Registry()
        dataset_block = DatasetBlock(ds, registry)
        m1 = ModelBlock(ds, "logistic", registry, block_id="m1", config=TrainConfig(seed=0))
        m2 = ModelBlock(ds, "logistic", registry, block_id="m2", config=TrainConfig(seed=1))
        agg = AggregatorBlock(registry, block_id="agg")
        pipeline = Pipeline(
            dataset_block.handle | parallel(m1.handle, m2.handle) | agg.handle, registry
        ).bind()
        m1.ensure_trained(), m2.ensure_trained()
        server = ApiServer(pipeline)
        probe = {"input": {"income": 6000.0}}

        mixed = []
        stop = threading.Event()

        def hammer():
            while not stop.is_set():
                status, env = server.dispatch("POST", "/chain/predict", probe)
                if status != 200:
                    continue
                labels = {b["label"] for b in env["value"]["per_branch"] if b}
                if len(labels) > 1:
                    mixed.append(env)

        threads = [threading.Thread(target=hammer) for _ in range(4)]
        for t in threads:
            t.start()
        flip = {"deny": "approve", "approve": "deny"}
        for i in range(len(ds.rows)):
            server.dispatch(
                "PUT", "/blocks/dataset/update_cell",
                {"row": i, "column": "status", "value": flip[ds.rows[i][-1]]},
            )
        stop.set()
        for t in threads:
            t.join()
        assert mixed == []
        status, env = server.dispatch("POST", "/chain/predict", probe)
        assert env["value"]["label"] == "deny"  # all labels flipped


class TestDispatchRobustness:
    @pytest.mark.parametrize("verb", ["GET", "POST", "PUT", "DELETE"])
    def test_garbage_requests_never_500(self, server, verb):
        import random

        rnd = random.Random(0)
        paths = [r.path for r in server.table.routes] + ["/nope", "/blocks/x/y", "/explain/zzz", "/"]
        bodies = [
            None, {}, {"input": None}, {"input": []}, {"input": {"income": None}},
            {"row": 5}, {"rule": 42}, {"unexpected": "key"}, {"index": "NaN"},
            {"instance": {"wrong": 1}}, {"values": {"income": "x"}},
        ]
        for _ in range(120):
            path = rnd.choice(paths)
            body = rnd.choice(bodies)
            status, payload = server.dispatch(verb, path, body, None)
            assert status in (200, 400, 404, 409, 422), (verb, path, body, status, payload)
            assert isinstance(payload, dict)


class TestShutdownPrecedence:
    def test_shutdown_outranks_validation_errors(self, server):
        server.dispatch("POST", "/shutdown", {"reason": "halt"})
        status, body = server.dispatch("POST", "/chain/predict", {"input": {}})
        assert status == 409
        status, body = server.dispatch("POST", "/blocks/model/predict", {"row": {}})
        assert status == 409
        server.dispatch("DELETE", "/shutdown")
        status, body = server.dispatch("POST", "/chain/predict", {"input": {}})
        assert status == 400  # now the schema error surfaces
