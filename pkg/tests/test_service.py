import numpy as np
import pytest
from fastapi.testclient import TestClient

from bevlab.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def scene_payload(client):
    resp = client.post("/scenes/generate", json={"seed": 5, "n_instances": 3})
    assert resp.status_code == 200
    return resp.json()


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_generate_schema(client, scene_payload):
    assert scene_payload["schema_version"] == 1
    assert scene_payload["grid"] == {"h": 32, "w": 32, "cell_m": 0.5}
    assert len(scene_payload["features"]) == 32 * 32 * 32
    assert len(scene_payload["instances"]) == 3
    inst = scene_payload["instances"][0]
    assert set(inst) == {"ctrl", "class", "mask_rle"}
    assert len(inst["ctrl"]) == 4 and len(inst["ctrl"][0]) == 3


def test_generate_deterministic(client, scene_payload):
    again = client.post("/scenes/generate", json={"seed": 5, "n_instances": 3}).json()
    assert again == scene_payload


def test_forward_endpoint(client, scene_payload):
    resp = client.post(
        "/decoder/forward",
        json={"scene": scene_payload, "seed": 1, "with_loss": True},
    )
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["layers"]) == 4  # init + 3 layers
    pred = body["prediction"]
    assert len(pred["instances"]) == 8
    confs = [inst["confidence"] for inst in pred["instances"]]
    assert all(0.0 <= c <= 1.0 for c in confs)
    assert body["losses"]["total"] > 0
    # control points from the sigmoid head stay inside the unit cube
    ctrl = np.array([inst["ctrl"] for inst in pred["instances"]])
    assert np.all(ctrl > 0) and np.all(ctrl < 1)


def test_forward_prediction_is_consistent_file(client, scene_payload):
    body = client.post("/decoder/forward", json={"scene": scene_payload}).json()
    from bevlab.io_json import prediction_from_payload

    ctrl, polylines, confs, classes, adjacency = prediction_from_payload(body["prediction"])
    assert ctrl.shape[0] == 8
    assert adjacency.shape == (8, 8)


def test_match_endpoint_self_match(client, scene_payload):
    pred = client.post("/decoder/forward", json={"scene": scene_payload}).json()["prediction"]
    resp = client.post("/matching/run", json={"scene": scene_payload, "prediction": pred})
    assert resp.status_code == 200
    pairs = resp.json()["pairs"]
    assert len(pairs) == 3  # min(#pred=8, #gt=3)
    assert len({i for i, _ in pairs}) == 3 and len({j for _, j in pairs}) == 3


def test_evaluate_endpoint_gt_is_perfect(client, scene_payload):
    from bevlab.io_json import scene_from_payload
    from bevlab.service.handlers import scene_as_prediction

    scene = scene_from_payload(scene_payload)
    pred = scene_as_prediction(scene).model_dump(by_alias=True)
    resp = client.post("/metrics/evaluate", json={"prediction": pred, "scene": scene_payload})
    assert resp.status_code == 200
    body = resp.json()
    assert body["det_l"] == 100.0
    assert body["det_l_ch"] == 100.0
    assert body["top_ll"] == 100.0
    assert abs(body["ols_l"] - 100.0) < 1e-9


def test_evaluate_v11m_flag(client, scene_payload):
    from bevlab.io_json import scene_from_payload
    from bevlab.service.handlers import scene_as_prediction

    scene = scene_from_payload(scene_payload)
    pred = scene_as_prediction(scene).model_dump(by_alias=True)
    body = client.post(
        "/metrics/evaluate", json={"prediction": pred, "scene": scene_payload, "v11m": True}
    ).json()
    assert body["top_ll"] == 100.0  # rank-preserving remap cannot change AP


def test_gradcheck_endpoint(client):
    resp = client.post("/gradcheck/run", json={"seed": 2, "rounds": 2})
    assert resp.status_code == 200
    body = resp.json()
    assert body["passed"] is True
    assert body["max_rel_error"] < 1e-5
    assert set(body["per_check"]) >= {"bilinear_sample", "spda", "mpda", "bda", "l1_regression", "mask_bce"}


def test_bench_endpoint_ordering(client):
    resp = client.post("/bench/run", json={"timing_repeats": 3})
    assert resp.status_code == 200
    rows = {r["variant"]: r for r in resp.json()["rows"]}
    macs = {k: v["multiply_accumulates"] for k, v in rows.items()}
    assert macs["bda"] <= macs["spda"] < macs["mpda"] < macs["mpda16"] < macs["sa"]
    assert rows["sa"]["sample_calls"] == 0
    assert rows["bda"]["sample_calls"] > 0


def test_fit_endpoint(client):
    resp = client.post("/fit/run", json={"seed": 3, "n_instances": 2, "iterations": 300})
    assert resp.status_code == 200
    body = resp.json()
    assert body["final_mean_l1"] < 1e-3
    trace = body["monotone_trace"]
    assert all(a >= b for a, b in zip(trace, trace[1:]))


def test_malformed_scene_is_422(client, scene_payload):
    broken = dict(scene_payload)
    broken["features"] = scene_payload["features"][:10]  # wrong length
    resp = client.post("/decoder/forward", json={"scene": broken})
    assert resp.status_code == 422


def test_bad_prediction_is_422(client, scene_payload):
    pred = client.post("/decoder/forward", json={"scene": scene_payload}).json()["prediction"]
    pred["instances"][0]["confidence"] = 2.0
    resp = client.post("/metrics/evaluate", json={"prediction": pred, "scene": scene_payload})
    assert resp.status_code == 422
