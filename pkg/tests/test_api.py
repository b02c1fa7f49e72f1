import pytest

from api import app


@pytest.fixture
def client():
    app.config["TESTING"] = True
    with app.test_client() as client:
        yield client


def test_lists_bundled_scenarios(client):
    response = client.get("/api/scenarios")
    assert response.status_code == 200
    body = response.get_json()
    assert body["success"]
    assert "table4.scn" in body["scenarios"]


def test_validate_by_name(client):
    body = client.post("/api/validate", json={"name": "table4.scn"}).get_json()
    assert body["success"]
    assert (body["name"], body["nodes"], body["edges"]) == ("table4", 4, 3)
    assert "topology:" in body["canonical"]


def test_validate_reports_issue_paths(client):
    response = client.post("/api/validate", json={"scenario": "topology:\n  nodes: [N1, N1]\n"})
    assert response.status_code == 400
    body = response.get_json()
    assert not body["success"]
    assert "topology.nodes[1].label" in [issue["path"] for issue in body["issues"]]


def test_validate_reports_parse_line(client):
    response = client.post("/api/validate", json={"scenario": ""})
    assert response.status_code == 400
    assert response.get_json()["line"] == 1


def test_missing_scenario_is_a_bad_request(client):
    response = client.post("/api/run", json={"seed": 1})
    assert response.status_code == 400
    assert "scenario or name" in response.get_json()["error"]


def test_unknown_name_is_a_bad_request(client):
    response = client.post("/api/run", json={"name": "nowhere.scn"})
    assert response.status_code == 400


@pytest.mark.parametrize("seed", ["7", 1.5, True])
def test_seed_must_be_an_integer(client, seed):
    response = client.post("/api/run", json={"name": "table4.scn", "seed": seed})
    assert response.status_code == 400


def test_unknown_mode_is_a_bad_request(client):
    response = client.post("/api/run", json={"name": "table4.scn", "mode": "gossip"})
    assert response.status_code == 400


def test_run_returns_metrics_and_trace(client):
    body = client.post("/api/run", json={"name": "table4.scn", "seed": 3, "include_trace": True}).get_json()
    assert body["success"]
    assert body["conservation"] is True
    assert body["metrics"]["total_tx"] == 31
    assert body["metrics"]["control_tx"] == {"MCJOIN": 4, "MCSTART": 4, "TABLE": 3}
    assert body["report"].startswith("# HAMANET run report")
    assert body["trace"][0].startswith("t=0 node=N1 ev=START")


def test_run_omits_trace_by_default(client):
    body = client.post("/api/run", json={"name": "table4.scn", "mode": "baseline"}).get_json()
    assert "trace" not in body
    assert body["metrics"]["broadcast_tx"] == 40


def test_compare(client):
    body = client.post("/api/compare", json={"name": "table4.scn", "messages": 10}).get_json()
    assert body["success"]
    assert (body["hamanet_total_tx"], body["baseline_total_tx"]) == (31, 40)
    assert body["crossover"] == 6
    assert body["scan"][0] == {"k": 1, "hamanet": 13, "baseline": 4}


def test_compare_rejects_negative_messages(client):
    response = client.post("/api/compare", json={"name": "table4.scn", "messages": -1})
    assert response.status_code == 400
