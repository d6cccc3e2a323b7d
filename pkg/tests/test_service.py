"""HTTP endpoints: happy paths, determinism, and the error envelope contract."""

import base64
import hashlib

import pytest
from fastapi.testclient import TestClient

from attnshare import random_weights, save_model, toy_config
from attnshare.service import create_app

SAMPLES = [{"id": "b", "ids": [5, 6, 7, 8]}, {"id": "a", "ids": [1, 2, 3]}]


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_model")
    config = toy_config()
    save_model(out, config, random_weights(config))
    return str(out)


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["version"]


def test_toy_is_deterministic(client):
    a = client.post("/toy", json={"seed": 42}).json()
    b = client.post("/toy", json={"seed": 42}).json()
    c = client.post("/toy", json={"seed": 1}).json()
    assert a == b
    assert a["blob_b64"] != c["blob_b64"]
    blob = base64.b64decode(a["blob_b64"])
    assert hashlib.sha256(blob).hexdigest() == a["blob_sha256"]


def test_toy_matches_saved_files(client, model_dir):
    import pathlib
    resp = client.post("/toy", json={}).json()
    root = pathlib.Path(model_dir)
    assert resp["manifest_json"] == (root / "manifest.json").read_text()
    assert base64.b64decode(resp["blob_b64"]) == (root / "weights.bin").read_bytes()


def test_generate_greedy(client, model_dir):
    req = {"model": model_dir, "prompt": [1, 2, 3], "steps": 5}
    a = client.post("/generate", json=req)
    assert a.status_code == 200
    body = a.json()
    # the response carries the continuation only; clients own the prompt
    assert len(body["tokens"]) == 5
    assert all(0 <= t < 256 for t in body["tokens"])
    assert body == client.post("/generate", json=req).json()


def test_generate_override_changes_config_digest(client, model_dir):
    base = client.post("/generate", json={"model": model_dir, "prompt": [1], "steps": 0}).json()
    shared = client.post("/generate", json={"model": model_dir, "prompt": [1], "steps": 0,
                                            "spans": ["2:6"]}).json()
    assert base["config_sha256"] != shared["config_sha256"]


def test_perplexity_rows_sorted_by_sample_id(client, model_dir):
    resp = client.post("/perplexity", json={"model": model_dir, "samples": SAMPLES})
    assert resp.status_code == 200
    body = resp.json()
    assert [row["sample"] for row in body["rows"]] == ["a", "b"]
    assert [row["n_tokens"] for row in body["rows"]] == [3, 4]
    mean = sum(row["perplexity"] for row in body["rows"]) / 2
    assert body["mean_perplexity"] == pytest.approx(mean)


def test_similarity_surface_shape_and_groups(client, model_dir):
    resp = client.post("/similarity", json={"model": model_dir, "samples": SAMPLES})
    body = resp.json()
    surface = body["surface"]
    assert len(surface) == 8 and all(len(row) == 8 for row in surface)
    assert all(abs(surface[i][i] - 1.0) < 1e-6 for i in range(8))
    groups = body["groups"]
    assert groups[0]["start"] == 0 and groups[-1]["end"] == 7


def test_similarity_per_head_and_shared_block(client, model_dir):
    resp = client.post("/similarity", json={
        "model": model_dir, "samples": SAMPLES, "head": 2, "spans": ["2:6"],
    })
    surface = resp.json()["surface"]
    assert all(abs(surface[i][j] - 1.0) < 1e-6
               for i in range(2, 7) for j in range(2, 7))


def test_variance_shapes(client, model_dir):
    resp = client.post("/variance", json={"model": model_dir, "samples": SAMPLES})
    body = resp.json()
    assert len(body["variance"]) == 8 and len(body["variance"][0]) == 4
    assert len(body["wcv"]) == 8 and len(body["wcv"][0]) == 4


def test_budget_default_is_baseline_only(client, model_dir):
    resp = client.post("/budget", json={"model": model_dir, "seq_lens": [4]})
    rows = resp.json()["rows"]
    assert len(rows) == 1
    assert rows[0]["plan"] == "none"
    assert rows[0]["flops_total"] == 2651072
    assert rows[0]["flops_delta_pct"] == 0.0


def test_budget_explicit_plans(client, model_dir):
    resp = client.post("/budget", json={
        "model": model_dir, "seq_lens": [4, 8], "plans": ["none", "2:6"],
    })
    rows = resp.json()["rows"]
    assert [(r["seq_len"], r["plan"]) for r in rows] == [
        (4, "none"), (4, "2:6"), (8, "none"), (8, "2:6")]
    assert rows[1]["key_bytes_delta_pct"] == -50.0
    assert rows[1]["softmax_flops"] == 480


def test_parity_endpoint(client, model_dir):
    resp = client.post("/parity", json={"model": model_dir, "seq_len": 8, "n_inputs": 2})
    body = resp.json()
    assert body["ok"] is True
    assert {c["name"] for c in body["checks"]} >= {
        "degenerate_bitwise", "decode_matches_full"}
    assert all(c["ok"] for c in body["checks"])


def test_missing_model_is_404_io_error(client):
    resp = client.post("/generate", json={"model": "/nonexistent/model",
                                          "prompt": [1], "steps": 0})
    assert resp.status_code == 404
    assert resp.json()["error"]["type"] == "io_error"


def test_bad_span_is_400_plan_error(client, model_dir):
    resp = client.post("/generate", json={"model": model_dir, "prompt": [1],
                                          "steps": 0, "spans": ["6:2"]})
    assert resp.status_code == 400
    assert resp.json()["error"]["type"] == "plan_error"


def test_cla_span_overlap_is_400_config_error(client, model_dir):
    resp = client.post("/generate", json={"model": model_dir, "prompt": [1], "steps": 0,
                                          "spans": ["0:3"], "cla": ["1:0"]})
    assert resp.status_code == 400
    assert resp.json()["error"]["type"] == "config_error"


def test_validation_failure_is_422_usage_error(client, model_dir):
    resp = client.post("/generate", json={"model": model_dir})
    assert resp.status_code == 422
    body = resp.json()
    assert body["error"]["type"] == "usage_error"
    assert "prompt" in body["error"]["message"]
    resp = client.post("/perplexity", json={
        "model": model_dir, "samples": [{"id": "x", "ids": []}]})
    assert resp.status_code == 422


def test_model_cache_tracks_file_changes(tmp_path):
    app = create_app()
    local = TestClient(app)
    import os
    config = toy_config()
    save_model(tmp_path, config, random_weights(config, seed=1))
    req = {"model": str(tmp_path), "prompt": [3, 4], "steps": 2}
    first = local.post("/generate", json=req).json()["tokens"]
    assert len(app.state.models) == 1
    # rewrite with different weights and a bumped mtime: cache must refresh
    save_model(tmp_path, config, random_weights(config, seed=2))
    blob = tmp_path / "weights.bin"
    os.utime(blob, ns=(blob.stat().st_atime_ns, blob.stat().st_mtime_ns + 10**9))
    manifest = tmp_path / "manifest.json"
    os.utime(manifest, ns=(manifest.stat().st_atime_ns, manifest.stat().st_mtime_ns + 10**9))
    second = local.post("/generate", json=req).json()["tokens"]
    assert first != second
