"""HTTP API surface: endpoints, schemas, and error mapping."""

import pytest
from fastapi.testclient import TestClient

from specdec import __version__
from specdec.service.app import create_app


@pytest.fixture
def client():
    return TestClient(create_app())


def _config_body(corpus, **overrides):
    body = {
        "corpus": corpus,
        "vocab_size": 256,
        "order": 3,
        "alpha": 0.01,
        "max_new_tokens": 24,
        "max_eval_records": 4,
    }
    body.update(overrides)
    return body


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "version": __version__}


def test_synth_writes_corpus(client, tmp_path):
    out = tmp_path / "corpus.jsonl"
    response = client.post(
        "/synth",
        json={"num_records": 6, "num_groups": 2, "overlap_rate": 0.8,
              "vocab_size": 256, "output": str(out)},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["num_records"] == 6
    assert body["output"] == str(out)
    assert out.exists()
    assert len(out.read_text().strip().splitlines()) == 6


def test_synth_inline_records(client):
    response = client.post(
        "/synth", json={"num_records": 3, "num_groups": 1, "overlap_rate": 1.0}
    )
    assert response.status_code == 200
    records = response.json()["records"]
    assert len(records) == 3
    assert records[0]["new_knowledge"] == records[0]["old_knowledge"][0]


def test_synth_invalid_rate_maps_to_config_error(client):
    response = client.post(
        "/synth", json={"num_records": 3, "num_groups": 1, "overlap_rate": 2.0}
    )
    assert response.status_code == 400
    assert response.json()["error_type"] == "config"


def test_build_pools_endpoint(client, small_corpus, tmp_path):
    out_dir = tmp_path / "pools"
    response = client.post(
        "/pools/build",
        json={
            "config": _config_body(small_corpus),
            "scheme": "customized",
            "output_dir": str(out_dir),
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["num_pools"] >= 2
    for info in body["pools"]:
        assert info["file"] is not None
        assert (tmp_path / "pools").joinpath(info["file"].split("/")[-1]).exists()

    from specdec.trie import load_pool

    pool = load_pool(body["pools"][0]["file"])
    assert pool.size_entries == body["pools"][0]["size_entries"]


def test_decode_endpoint_speculative_and_baseline(client, small_corpus):
    config = _config_body(small_corpus)
    speculative = client.post("/decode", json={"config": config}).json()
    baseline = client.post(
        "/decode", json={"config": config, "baseline": True}
    ).json()
    assert speculative["record_id"] == baseline["record_id"]
    assert speculative["tokens"] == baseline["tokens"]  # greedy losslessness
    assert speculative["report"]["model_calls"] <= baseline["report"]["model_calls"]
    assert baseline["report"]["model_calls"] == baseline["report"]["tokens_generated"]
    assert speculative["policy"]["mode"] == "greedy"


def test_decode_unknown_record_is_data_error(client, small_corpus):
    response = client.post(
        "/decode", json={"config": _config_body(small_corpus), "record_id": "ghost"}
    )
    assert response.status_code == 400
    assert response.json()["error_type"] == "data"


def test_decode_missing_corpus_is_config_error(client):
    response = client.post("/decode", json={"config": _config_body("missing.jsonl")})
    assert response.status_code == 400
    assert response.json()["error_type"] == "config"


def test_bench_endpoint_writes_report(client, small_corpus, tmp_path):
    out = tmp_path / "report.json"
    response = client.post(
        "/bench",
        json={
            "config": _config_body(small_corpus, schemes=["global", "customized"]),
            "output": str(out),
        },
    )
    assert response.status_code == 200
    report = response.json()["report"]
    assert len(report["rows"]) == 2
    assert out.exists()


def test_request_validation_is_422(client):
    response = client.post("/bench", json={"config": {"vocab_size": 8}})
    assert response.status_code == 422
