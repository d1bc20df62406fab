"""HTTP API: run lifecycle, labeling queue, exports, error surfaces."""
from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient

from dedup_al.service import create_app


def _tiny_document(seed=0, **overrides) -> dict:
    doc = {
        "seed": seed,
        "rounds": 1,
        "budget": 8,
        "max_len": 48,
        "min_token_count": 1,
        "bucket_cap": 25,
        "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32,
                    "dropout_rate": 0.1},
        "training": {"epochs_per_round": 2, "learning_rate": 1e-3, "batch_size": 16,
                     "seed": seed},
        "corpus": {"synthetic": {"n_entities": 40, "duplicates_per_entity": 2,
                                 "typo_rate": 0.3, "field_drop_rate": 0.1,
                                 "abbreviation_rate": 0.2, "numeric_reformat_rate": 0.3,
                                 "seed": 11}},
    }
    doc.update(overrides)
    return doc


@pytest.fixture()
def client(tmp_path):
    app = create_app(data_dir=tmp_path / "runs")
    with TestClient(app) as tc:
        yield tc
        app.state.registry.shutdown()


def _wait_for(client, run_id: str, predicate, timeout=60.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        payload = client.get(f"/runs/{run_id}").json()
        if payload.get("error"):
            raise AssertionError(f"run failed: {payload['error']}")
        if predicate(payload):
            return payload
        time.sleep(0.1)
    raise AssertionError(f"timed out waiting for run {run_id}")


def test_rejects_invalid_config(client):
    resp = client.post("/runs", json=_tiny_document(budget=0))
    assert resp.status_code == 400
    assert "$.budget" in resp.json()["error"]


def test_unknown_run_is_404(client):
    assert client.get("/runs/run-doesnotexist").status_code == 404
    assert client.get("/runs/run-doesnotexist/queue").status_code == 404


def test_ground_truth_run_completes_and_exports(client):
    resp = client.post("/runs", json=_tiny_document())
    assert resp.status_code == 201
    created = resp.json()
    run_id = created["run_id"]
    assert created["status"] in ("training", "scoring", "awaiting_labels", "done")
    assert created["rounds_total"] == 1

    done = _wait_for(client, run_id, lambda p: p["status"] == "done")
    assert done["labeled_count"] == 16  # seed batch + one round

    reports = client.get(f"/runs/{run_id}/reports").json()
    assert len(reports) == 1
    assert reports[0]["round_index"] == 1
    assert reports[0]["f1"] is not None
    assert done["latest_report"] == reports[-1]

    export = client.get(f"/runs/{run_id}/export").json()
    pairs = export["pairs"]
    assert pairs and all(set(row) == {"pair_id", "left_id", "right_id", "p", "duplicate"}
                         for row in pairs)
    clusters = export["clusters"]
    # transitive closure: endpoints of every positive pair share a cluster,
    # and each cluster is named after its smallest member
    for row in pairs:
        if row["duplicate"]:
            assert clusters[row["left_id"]] == clusters[row["right_id"]]
    for rid, cid in clusters.items():
        assert clusters[cid] == cid
        assert cid <= rid
    # closure is minimal: a record with no positive edge stays a singleton
    import collections
    degree = collections.Counter()
    for row in pairs:
        if row["duplicate"]:
            degree[row["left_id"]] += 1
            degree[row["right_id"]] += 1
    for rid, cid in clusters.items():
        if degree[rid] == 0:
            assert cid == rid

    # queue endpoints refuse a finished run
    assert client.get(f"/runs/{run_id}/queue").status_code == 409
    assert client.post(f"/runs/{run_id}/labels",
                       json={"labels": [{"pair_id": "x|y", "y": 1}]}).status_code == 409


def test_reposting_same_config_reuses_run(client):
    doc = _tiny_document(seed=1)
    first = client.post("/runs", json=doc).json()
    second = client.post("/runs", json=doc).json()
    assert first["run_id"] == second["run_id"]


def test_export_before_done_is_409(client):
    doc = _tiny_document(seed=2, oracle="human")
    run_id = client.post("/runs", json=doc).json()["run_id"]
    _wait_for(client, run_id, lambda p: p["status"] == "awaiting_labels")
    assert client.get(f"/runs/{run_id}/export").status_code == 409


def test_human_label_queue_round_trip(client):
    doc = _tiny_document(seed=3, oracle="human", budget=4)
    run_id = client.post("/runs", json=doc).json()["run_id"]
    _wait_for(client, run_id, lambda p: p["status"] == "awaiting_labels")

    queue = client.get(f"/runs/{run_id}/queue").json()
    assert len(queue) == 4
    for item in queue:
        assert {"pair_id", "left_id", "right_id", "left", "right",
                "p", "requested_at"} <= set(item)
    # most uncertain first
    margins = [abs(item["p"] - 0.5) for item in queue]
    assert margins == sorted(margins)

    # one valid judgment
    first = queue[0]["pair_id"]
    resp = client.post(f"/runs/{run_id}/labels",
                       json={"labels": [{"pair_id": first, "y": 1,
                                         "annotator": "annie"}]})
    assert resp.status_code == 200
    body = resp.json()
    assert body["results"] == [{"pair_id": first, "accepted": True, "reason": None}]
    assert body["remaining"] == 3

    # rejected: resubmission of the same pair and a pair that is not pending
    resp = client.post(f"/runs/{run_id}/labels",
                       json={"labels": [{"pair_id": first, "y": 0},
                                        {"pair_id": "nope|pair", "y": 1}]})
    accepted = {r["pair_id"]: r["accepted"] for r in resp.json()["results"]}
    assert accepted == {first: False, "nope|pair": False}
    assert resp.json()["remaining"] == 3

    # malformed bodies
    assert client.post(f"/runs/{run_id}/labels", json={}).status_code == 400
    assert client.post(f"/runs/{run_id}/labels",
                       json={"labels": []}).status_code == 400
    assert client.post(f"/runs/{run_id}/labels",
                       json={"labels": [{"pair_id": first}]}).status_code == 400
    assert client.post(f"/runs/{run_id}/labels",
                       json={"labels": [{"pair_id": first, "y": 5}]}).status_code == 400

    # drain the queue with correct labels; the run then finishes on its own
    from dedup_al.config import config_from_dict
    from dedup_al.evaluation import pair_truth
    tiny_corpus = config_from_dict(doc).corpus.build()
    while True:
        payload = client.get(f"/runs/{run_id}").json()
        if payload["status"] == "done":
            break
        if payload["status"] != "awaiting_labels":
            time.sleep(0.1)
            continue
        queue = client.get(f"/runs/{run_id}/queue")
        if queue.status_code != 200 or not queue.json():
            time.sleep(0.1)
            continue
        labels = [{"pair_id": item["pair_id"],
                   "y": pair_truth(tiny_corpus, item["pair_id"])}
                  for item in queue.json()]
        client.post(f"/runs/{run_id}/labels", json={"labels": labels})
    reports = client.get(f"/runs/{run_id}/reports").json()
    assert len(reports) == 1
