from fastapi.testclient import TestClient

from regionmap.exceptions import ConfigurationError
from regionmap.main import app
from regionmap.services.storage_service import clear, save_run

client = TestClient(app)

SMALL_RUN = {
    "config": {"case": "I", "budget": 200, "methods": ["kriging"]},
    "seed": 3,
}


def test_root_health_check():
    """The root endpoint confirms the service is up."""
    response = client.get("/")
    assert response.status_code == 200
    assert "live" in response.json()["message"]


def test_describe_benchmark_case():
    """Case I is 2D on [0, 6]^2 with four regions and no listed minima."""
    response = client.get("/benchmarks/I")

    assert response.status_code == 200
    data = response.json()
    assert data["dimension"] == 2
    assert data["bounds"] == [[0.0, 6.0], [0.0, 6.0]]
    assert data["region_count"] == 4
    assert data["minima"] == []


def test_describe_case_three_lists_minima():
    """The cosine landscape reports its 27 minima."""
    data = client.get("/benchmarks/III").json()
    assert data["dimension"] == 4
    assert len(data["minima"]) == 27


def test_unknown_case_returns_404():
    """Unknown case labels are not found."""
    assert client.get("/benchmarks/IV").status_code == 404
    assert client.post("/benchmarks/IV/evaluate", json={"points": []}).status_code == 404


def test_evaluate_points():
    """Objective values come back in request order."""
    payload = {"points": [[1.2, 2.0], [3.0, 3.0]]}
    response = client.post("/benchmarks/I/evaluate", json=payload)

    assert response.status_code == 200
    values = response.json()["values"]
    assert values[0] == 0.0
    assert len(values) == 2


def test_evaluate_rejects_wrong_dimension():
    """Points of the wrong dimension are a client error."""
    response = client.post("/benchmarks/I/evaluate", json={"points": [[1.0, 2.0, 3.0]]})
    assert response.status_code == 400


def test_create_and_read_run():
    """
    A posted run executes the pipeline once, is stored under a new id and
    can be read back, listed and deleted.
    """
    clear()
    response = client.post("/runs/", json=SMALL_RUN)

    assert response.status_code == 201
    data = response.json()
    run_id = data["run_id"]
    assert data["record"]["seed"] == 3
    assert data["record"]["evaluations"] <= 200

    stored = client.get(f"/runs/{run_id}")
    assert stored.status_code == 200
    assert stored.json()["clusters_local"] == data["record"]["clusters_local"]
    assert client.get("/runs/").json() == [run_id]

    assert client.delete(f"/runs/{run_id}").status_code == 204
    assert client.get(f"/runs/{run_id}").status_code == 404


def test_read_unknown_run_returns_404():
    """Requests for a missing run id return 404."""
    assert client.get("/runs/no_such_id").status_code == 404
    assert client.delete("/runs/no_such_id").status_code == 404


def test_read_run_from_store():
    """Records injected into the store are served as they are."""
    record = {"seed": 1, "case": "II", "algorithm": "nea2", "budget": 100, "evaluations": 100}
    save_run("abc123", record)

    response = client.get("/runs/abc123")

    assert response.status_code == 200
    assert response.json()["algorithm"] == "nea2"


def test_create_run_maps_configuration_errors(monkeypatch):
    """Configuration problems inside the pipeline answer 400."""

    def broken(config, seed):
        raise ConfigurationError("grid too coarse")

    monkeypatch.setattr("regionmap.routers.runs_router.run_pipeline", broken)
    response = client.post("/runs/", json=SMALL_RUN)

    assert response.status_code == 400
    assert "grid too coarse" in response.json()["detail"]


def test_create_run_rejects_invalid_config():
    """Out-of-range configuration values fail request validation."""
    response = client.post("/runs/", json={"config": {"budget": 0}})
    assert response.status_code == 422
