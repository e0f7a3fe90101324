import json
import threading
import time

import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from privitr.datagen import generate_replicate, scenario
from privitr.distributed import (
    aggregate_summaries,
    compute_site_summary,
    solve_distributed,
    summary_to_dict,
)
from privitr.gdwols import DesignSpec
from privitr.service import app
from privitr.weights import TreatmentModelSpec

SPEC = DesignSpec(("log(x)", "sin(x)", "x"), ("x",))
WSPEC = TreatmentModelSpec("binary", ("x",))


@pytest.fixture
def client():
    with TestClient(app) as c:
        c.delete("/summaries")
        yield c
        c.delete("/summaries")


def site_summaries(n_total=900, base_seed=8):
    data = generate_replicate(scenario("a", n_total=n_total, base_seed=base_seed), 0)
    return [
        compute_site_summary(site_data, SPEC, WSPEC, site_id=lab)
        for lab, site_data in data.split_by_site().items()
    ]


class TestHealthAndListing:
    def test_healthz(self, client):
        res = client.get("/healthz")
        assert res.status_code == 200
        assert res.json() == {"status": "ok", "n_sites_held": 0}

    def test_listing_after_submissions(self, client):
        for s in site_summaries():
            assert client.post("/summaries", json=summary_to_dict(s)).status_code == 201
        listed = client.get("/summaries").json()
        assert [entry["site_id"] for entry in listed] == ["1", "2", "3"]


class TestSubmission:
    def test_duplicate_site_409(self, client):
        s = site_summaries()[0]
        assert client.post("/summaries", json=summary_to_dict(s)).status_code == 201
        assert client.post("/summaries", json=summary_to_dict(s)).status_code == 409

    def test_tampered_payload_422(self, client):
        payload = summary_to_dict(site_summaries()[0])
        payload["blip_order"] = "quadratic"  # breaks the fingerprint
        assert client.post("/summaries", json=payload).status_code == 422

    def test_wrong_shape_422(self, client):
        payload = summary_to_dict(site_summaries()[0])
        payload["xtwx"] = payload["xtwx"][:-1]
        assert client.post("/summaries", json=payload).status_code == 422


class TestEstimate:
    def test_matches_in_process_solve(self, client):
        summaries = site_summaries()
        for s in summaries:
            client.post("/summaries", json=summary_to_dict(s))
        res = client.post("/estimate", json={})
        assert res.status_code == 200
        body = res.json()
        expected = solve_distributed(aggregate_summaries(summaries))
        np.testing.assert_allclose(body["psi"], expected.psi, rtol=1e-12)
        assert body["method"] == "distributed"
        assert body["psi_standard_errors"] == [None, None]
        assert body["diagnostics"]["site_ids"] == ["1", "2", "3"]

    def test_no_summaries_404(self, client):
        assert client.post("/estimate", json={}).status_code == 404

    def test_mixed_fingerprints_409_and_filter(self, client):
        summaries = site_summaries()
        for s in summaries[:2]:
            client.post("/summaries", json=summary_to_dict(s))
        other_spec = DesignSpec(("x",), ("x",))
        data = generate_replicate(scenario("a", n_total=300, base_seed=9), 0)
        odd = compute_site_summary(data.split_by_site()["3"], other_spec, WSPEC,
                                   site_id="odd-site")
        client.post("/summaries", json=summary_to_dict(odd))
        assert client.post("/estimate", json={}).status_code == 409
        res = client.post("/estimate", json={"fingerprint": summaries[0].fingerprint})
        assert res.status_code == 200
        assert res.json()["diagnostics"]["site_ids"] == ["1", "2"]


class TestDose:
    def test_round_trip(self, client):
        # blip 4a - a^2 peaks at a = 2
        estimate = {
            "method": "distributed",
            "columns": ["a", "a*x", "a^2", "a^2*x"],
            "theta": [4.0, 0.0, -1.0, 0.0],
            "psi_names": ["a", "a*x", "a^2", "a^2*x"],
            "psi": [4.0, 0.0, -1.0, 0.0],
            "psi_standard_errors": [None, None, None, None],
            "blip_order": "quadratic",
            "blip_basis": ["x"],
            "diagnostics": {},
        }
        res = client.post("/dose", json={"estimate": estimate,
                                         "covariates": {"x": 10.0},
                                         "a_min": 0.0, "a_max": 10.0})
        assert res.status_code == 200
        body = res.json()
        assert body["dose"] == 2.0
        assert not body["at_boundary"]

    def test_linear_estimate_rejected(self, client):
        estimate = {
            "method": "gold_standard", "columns": ["a", "a*x"],
            "theta": [1.0, 0.0], "psi_names": ["a", "a*x"], "psi": [1.0, 0.0],
            "psi_standard_errors": [None, None], "blip_order": "linear",
            "blip_basis": ["x"], "diagnostics": {},
        }
        res = client.post("/dose", json={"estimate": estimate,
                                         "covariates": {"x": 1.0},
                                         "a_min": 0.0, "a_max": 1.0})
        assert res.status_code == 422


@pytest.fixture(scope="module")
def live_server():
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10.0
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5.0)


class TestCliThinClient:
    def test_submit_and_remote_estimate(self, tmp_path, live_server):
        from privitr import cli
        from privitr.distributed import write_summary

        summaries = site_summaries(n_total=600, base_seed=15)
        paths = []
        for s in summaries:
            path = tmp_path / f"site{s.site_id}.json"
            write_summary(s, path)
            paths.append(str(path))
        assert cli.main(["submit", *paths, "--url", live_server]) == 0
        # resubmitting the same site is a protocol error (exit 4)
        assert cli.main(["submit", paths[0], "--url", live_server]) == 4

        out = tmp_path / "est.json"
        assert cli.main(["remote-estimate", "--url", live_server,
                         "--out", str(out)]) == 0
        got = json.loads(out.read_text())
        expected = solve_distributed(aggregate_summaries(summaries))
        np.testing.assert_allclose(got["psi"], expected.psi, rtol=1e-12)
        assert got["config"]["command"] == "remote-estimate"
