"""HTTP service and CLI surfaces."""

import json

import pytest
from fastapi.testclient import TestClient

from oranlab.cli import main
from oranlab.service import create_app


@pytest.fixture()
def client(tmp_path):
    app = create_app(data_dir=str(tmp_path / "data"))
    with TestClient(app) as c:
        yield c


def policy_body(policy_id="p1", value=5):
    return {"policy_id": policy_id, "policy_type_id": 20008,
            "scope": {"slice": "urllc"},
            "statements": [{"kind": "objective", "name": "latency_proxy_ms",
                            "comparator": "<=", "value": value}]}


class TestService:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"

    def test_scenarios_listed(self, client):
        names = [s["name"] for s in client.get("/scenarios").json()]
        assert "slicing-baseline" in names

    def test_run_bundled_scenario(self, client):
        resp = client.post("/runs", json={"scenario": "slicing-train-a"})
        assert resp.status_code == 200, resp.text
        summary = resp.json()
        assert summary["consistent"] is True
        run_id = summary["run_id"]
        assert run_id in client.get("/runs").json()
        detail = client.get(f"/runs/{run_id}").json()
        assert detail["report"]["scenario"] == "slicing-train-a"

    def test_run_inline_yaml_and_capture_inspect(self, client):
        yaml_text = """
name: inline-mini
duration_ms: 2000
warmup_ms: 500
nodes:
  - node_id: du-0
    cells:
      - cell_id: 0
        global_id: 1000
        total_prb: 10
        slices: [{slice_id: urllc, kind: urllc, dedicated_prb: 5}]
ues:
  - {ue_id: 1, slice: urllc, cell: 0,
     traffic: {kind: constant, rate_bytes: 1000}}
xapps:
  - kind: kpm-monitor
"""
        resp = client.post("/runs", json={"scenario_yaml": yaml_text,
                                          "capture": True})
        assert resp.status_code == 200, resp.text
        run_id = resp.json()["run_id"]
        text = client.post("/inspect", json={"run_id": run_id}).json()["text"]
        assert "procedureCode: 8" in text

    def test_run_rejects_bad_scenario(self, client):
        resp = client.post("/runs", json={"scenario_yaml": "name: x"})
        assert resp.status_code == 422

    def test_run_requires_exactly_one_source(self, client):
        assert client.post("/runs", json={}).status_code == 422

    def test_policy_lifecycle_and_injection(self, client):
        resp = client.post("/policies", json={"op": "create",
                                              "policy": policy_body()})
        assert resp.status_code == 200
        assert [p["policy_id"] for p in resp.json()["policies"]] == ["p1"]
        resp = client.post("/policies", json={"op": "create",
                                              "policy": policy_body()})
        assert resp.status_code == 422  # duplicate
        run = client.post("/runs", json={"scenario": "slicing-train-a"}).json()
        report = client.get(f"/runs/{run['run_id']}").json()["report"]
        enforced = [(f["policy_id"], f["enforced"])
                    for f in report["policy_feedback"]]
        assert ("p1", True) in enforced
        resp = client.post("/policies", json={"op": "delete", "policy_id": "p1"})
        assert resp.json()["policies"] == []

    def test_policy_schema_violation(self, client):
        bad = policy_body()
        bad["statements"] = []
        resp = client.post("/policies", json={"op": "create", "policy": bad})
        assert resp.status_code == 422

    def test_catalog_empty_then_after_train(self, client):
        assert client.get("/catalog").json() == []
        resp = client.post("/train", json={
            "train": ["slicing-train-a"],
            "validate_with": ["slicing-val-b"]})
        assert resp.status_code == 200, resp.text
        out = resp.json()
        assert out["published"] is True
        entries = client.get("/catalog").json()
        assert entries[0]["model_id"] == out["model_id"]
        one = client.get(f"/catalog/{out['model_id']}").json()
        assert one["manifest"]["model_id"] == out["model_id"]
        assert client.get("/catalog/ghost").status_code == 404

    def test_inspect_missing(self, client):
        assert client.post("/inspect",
                           json={"path": "/does/not/exist"}).status_code == 404


class TestCli:
    def test_run_local(self, tmp_path, capsys):
        code = main(["run", "slicing-train-a", "--out", str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert code == 0
        assert "state hash:" in out
        assert (tmp_path / "o" / "report.json").exists()

    def test_run_unknown_scenario_exits_2(self, capsys):
        code = main(["run", "no-such-scenario"])
        assert code == 2
        assert "scenario error" in capsys.readouterr().err

    def test_inspect_local(self, tmp_path, capsys):
        cap = tmp_path / "wire.cap"
        main(["run", "slicing-train-a", "--capture", str(cap),
              "--out", str(tmp_path / "o")])
        capsys.readouterr()
        code = main(["inspect", str(cap)])
        out = capsys.readouterr().out
        assert code == 0
        assert "procedureCode: 8" in out

    def test_inspect_garbage_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cap"
        bad.write_bytes(b"not a capture")
        assert main(["inspect", str(bad)]) == 2

    def test_policies_local_store(self, tmp_path, capsys):
        store = tmp_path / "policies.json"
        op = json.dumps({"op": "create", **policy_body("cli-1")})
        assert main(["policies", op, "--store", str(store)]) == 0
        saved = json.loads(store.read_text())
        assert saved[0]["policy_id"] == "cli-1"
        capsys.readouterr()
        assert main(["policies", json.dumps({"op": "query"}),
                     "--store", str(store)]) == 0
        assert "cli-1" in capsys.readouterr().out

    def test_policies_bad_json_exits_2(self, capsys):
        assert main(["policies", "{nope"]) == 2

    def test_train_empty_glob_exits_2(self, tmp_path, capsys):
        code = main(["train", str(tmp_path / "none-*.yaml"),
                     "--catalog", str(tmp_path / "cat"),
                     "--workdir", str(tmp_path / "work")])
        assert code == 2

    def test_train_publishes_model(self, tmp_path, capsys):
        code = main(["train", "slicing-train-a",
                     "--validate", "slicing-val-b",
                     "--catalog", str(tmp_path / "cat"),
                     "--workdir", str(tmp_path / "work")])
        out = capsys.readouterr().out.strip()
        assert code == 0
        assert out.startswith("slicing-")
        assert (tmp_path / "cat" / out / "manifest.txt").exists()
