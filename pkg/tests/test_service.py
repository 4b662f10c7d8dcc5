import numpy as np
import pytest
from fastapi.testclient import TestClient

from qbnet import data, nn
from qbnet.checkpoint import load_checkpoint
from qbnet.service import app

DATASET = "synth-frames?train=120&valid=60&test=60&classes=4&features=12&sep=4.0&seed=0"
TRAIN = {"learning_rate": 0.5, "batch_size": 20, "max_epochs": 3,
         "early_stop_patience": 3, "lr_decay": 1.0}


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"


def test_train_endpoint_writes_checkpoint(client, tmp_path):
    out = tmp_path / "float.qbnet"
    resp = client.post("/train", json={
        "network": {"family": "fcdnn", "hidden_units": 8},
        "train": TRAIN,
        "dataset": DATASET,
        "seed": 1,
        "out": str(out),
    })
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert out.exists()
    assert 0.0 <= body["valid_error"] <= 1.0
    assert body["epochs"] == 3

    # service result matches the in-process library call bit for bit
    net = load_checkpoint(out).net
    bundle = data.resolve_dataset(DATASET)
    assert body["test_error"] == nn.evaluate(net, bundle.test)


def test_quantize_and_eval_endpoints(client, tmp_path):
    out = tmp_path / "f.qbnet"
    client.post("/train", json={
        "network": {"family": "fcdnn", "hidden_units": 8},
        "train": TRAIN, "dataset": DATASET, "seed": 1, "out": str(out)})
    qout = tmp_path / "q.qbnet"
    resp = client.post("/quantize", json={
        "checkpoint": str(out), "bits": 2, "method": "direct", "out": str(qout)})
    assert resp.status_code == 200, resp.text
    assert len(resp.json()["step_sizes"]) == 5

    resp = client.post("/eval", json={"checkpoint": str(qout), "dataset": DATASET})
    assert resp.status_code == 200
    assert 0.0 <= resp.json()["error"] <= 1.0
    loaded = load_checkpoint(qout)
    for w in loaded.net.weights:
        assert len(np.unique(w)) <= 3


def test_sweep_and_ecr_endpoints(client, tmp_path):
    out = tmp_path / "results.csv"
    resp = client.post("/sweep", json={
        "sweep": {
            "family": "fcdnn", "sizes": [4, 8], "bit_widths": [2],
            "methods": ["float", "retrain"], "seeds": [1],
            "train": TRAIN, "dataset": DATASET,
        },
        "out": str(out),
    })
    assert resp.status_code == 200, resp.text
    assert resp.json()["n_records"] == 2 * (1 + 1)

    resp = client.post("/ecr", json={"records": str(out), "out_dir": str(tmp_path / "ecr")})
    assert resp.status_code == 200, resp.text
    assert resp.json()["n_reports"] == 2


def test_unknown_key_rejected_422(client, tmp_path):
    resp = client.post("/eval", json={"checkpoint": "x", "dataset": DATASET,
                                      "not_a_key": True})
    assert resp.status_code == 422


def test_missing_checkpoint_400(client, tmp_path):
    resp = client.post("/eval", json={"checkpoint": str(tmp_path / "none.qbnet"),
                                      "dataset": DATASET})
    assert resp.status_code == 400
    assert "checkpoint" in resp.json()["detail"]


def test_bad_dataset_identifier_400(client, tmp_path):
    out = tmp_path / "f.qbnet"
    client.post("/train", json={
        "network": {"family": "fcdnn", "hidden_units": 8},
        "train": TRAIN, "dataset": DATASET, "seed": 1, "out": str(out)})
    resp = client.post("/eval", json={"checkpoint": str(out), "dataset": "timit"})
    assert resp.status_code == 400


def test_synth_endpoint(client, tmp_path):
    out = tmp_path / "ds.npz"
    resp = client.post("/synth", json={"kind": "frames", "out": str(out),
                                       "n_samples": 122, "n_features": 9, "n_classes": 61})
    assert resp.status_code == 200, resp.text
    assert resp.json()["n_samples"] == 122
    assert data.load_dataset_npz(out).features.shape == (122, 9)
