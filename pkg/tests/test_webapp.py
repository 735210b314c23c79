import pytest
from fastapi.testclient import TestClient

from config.settings import settings
from webapp.backend.main import app, cache

FIG4 = {"kind": "scripted", "default": "wcet_lo", "budgets": {"pi1": {"1": 7}}}


@pytest.fixture
def client():
    cache.clear()
    with TestClient(app) as test_client:
        yield test_client


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["cache_stats"]["entries"] == 0


def test_fixtures_listing(client):
    assert client.get("/api/fixtures").json() == ["fig4", "fig5", "table1", "table2"]


def test_simulate_fixture_with_inline_script(client):
    payload = {"taskset": "table1", "algorithm": "multimode", "scenario": FIG4, "horizon": 80}
    response = client.post("/api/simulate", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["metrics"]["hc_deadline_misses"] == 0
    assert body["violations"] == []
    assert "trace" not in body


def test_simulate_is_cached(client):
    payload = {"taskset": "table1", "algorithm": "fp", "scenario": FIG4, "horizon": 60}
    first = client.post("/api/simulate", json=payload).json()
    second = client.post("/api/simulate", json=payload).json()
    assert first == second
    assert first["metrics"]["hc_deadline_misses"] == 1
    assert client.get("/api/health").json()["cache_stats"]["hits"] == 1
    client.post("/api/cache/clear")
    assert client.get("/api/health").json()["cache_stats"]["entries"] == 0


def test_simulate_inline_taskset(client):
    taskset = {
        "time_scale": 10,
        "tasks": [
            {"id": "a", "period": 10, "wcet_lo": 2, "wcet_hi": 3.5, "criticality": "HC", "priority": 1},
            {"id": "b", "period": 20, "wcet_lo": 4, "criticality": "LC", "priority": 2},
        ],
    }
    payload = {"taskset": taskset, "algorithm": "fp", "scenario": {"kind": "scripted", "default": "wcet_lo"},
               "horizon": 40, "include_trace": True}
    body = client.post("/api/simulate", json=payload).json()
    assert body["metrics"]["time_scale"] == 10
    assert body["metrics"]["horizon"] == 400
    assert body["trace"][0]["kind"] == "Release"


@pytest.mark.parametrize("payload", [
    {"taskset": "no-such-taskset"},
    {"taskset": {"tasks": []}},
    {"taskset": "table1", "algorithm": "edf", "horizon": 20},
    {"taskset": "table1", "scenario": {"kind": "scripted"}, "horizon": 20},
    {"taskset": "table1", "algorithm": "fp", "horizon": 200001},
])
def test_simulate_rejects_bad_input(client, payload):
    assert client.post("/api/simulate", json=payload).status_code == 422


def test_analyze(client):
    body = client.post("/api/analyze", json={"taskset": "table1", "theorem": "T1_Normal"}).json()
    assert (body["pivot"], body["schedulable"], body["witness_z"], body["demand"]) == ("pi2", True, 19, 19)
    assert body["rows"][-1]["z"] == 20


def test_analyze_inline_snapshot(client):
    snapshot = {"t": 5, "lc_shrink": {"delta": 12, "eta": 5},
                "jobs": {"pi1": {"release": 0}, "pi2": {"release": 5}, "pi3": {"release": 5}}}
    body = client.post("/api/analyze", json={"taskset": "fig5", "theorem": "T3_Shrinking", "snapshot": snapshot}).json()
    assert (body["pivot"], body["witness_z"], body["demand"]) == ("pi1", 30, 30)


def test_analyze_inapplicable(client):
    response = client.post("/api/analyze", json={"taskset": "table1", "theorem": "T4_Critical"})
    assert response.status_code == 422
    assert "theorem inapplicable" in response.json()["detail"]


def test_websocket_streams_trace_then_metrics(client):
    payload = {"taskset": "table1", "algorithm": "fp", "scenario": FIG4, "horizon": 40}
    with client.websocket_connect("/ws/simulate") as websocket:
        websocket.send_json(payload)
        messages = []
        while True:
            message = websocket.receive_json()
            messages.append(message)
            if message["type"] != "event":
                break
    assert messages[-1]["type"] == "metrics"
    assert messages[-1]["metrics"]["hc_deadline_misses"] == 1
    assert messages[0]["event"]["kind"] == "Release"
    assert len(messages) > 10


def test_websocket_reports_errors(client):
    with client.websocket_connect("/ws/simulate") as websocket:
        websocket.send_json({"taskset": "no-such-taskset"})
        assert websocket.receive_json()["type"] == "error"


def test_horizon_limit_follows_settings(client, monkeypatch):
    monkeypatch.setattr(settings, "max_horizon_units", 40)
    payload = {"taskset": "table1", "algorithm": "fp", "scenario": FIG4}
    assert client.post("/api/simulate", json={**payload, "horizon": 40}).status_code == 200
    response = client.post("/api/simulate", json={**payload, "horizon": 41})
    assert response.status_code == 422
    assert "exceeds the limit" in response.json()["detail"]
