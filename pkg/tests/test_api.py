from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from formforge.api.app import RuntimeContext, create_app
from formforge.driver.config import RunConfig
from formforge.driver.engine import Engine
from formforge.manifest_fixtures import write_synthetic_manifest


@pytest.fixture
def finished_engine(tmp_path) -> Engine:
    manifest = write_synthetic_manifest(tmp_path / "targets.json",
                                        target_count=5, seed=7)
    config = RunConfig(
        run_dir=tmp_path / "run", targets_manifest=manifest,
        mode="simulate", seed=42, racing_width_default=2, max_rounds=20,
    )
    engine = Engine(config)
    engine.run()
    return engine


@pytest.fixture
def client(finished_engine) -> TestClient:
    app = create_app(RuntimeContext.from_engine(finished_engine))
    return TestClient(app)


class TestReadEndpoints:
    def test_run_status(self, client):
        payload = client.get("/api/run").json()
        assert payload["goals_total"] == 5
        assert payload["goals_completed"] == 5
        assert payload["state"] == "finished"

    def test_tasks(self, client):
        tasks = client.get("/api/tasks").json()
        assert len(tasks) >= 5
        assert {t["status"] for t in tasks} <= {
            "pending", "in_progress", "completed", "failed", "deleted"
        }

    def test_graph_nodes_match_tasks(self, client):
        graph = client.get("/api/graph").json()
        tasks = client.get("/api/tasks").json()
        live = [t for t in tasks if t["status"] != "deleted"]
        assert len(graph["nodes"]) == len(live)
        node_ids = {n["id"] for n in graph["nodes"]}
        for edge in graph["edges"]:
            assert edge["from"] in node_ids and edge["to"] in node_ids

    def test_goals(self, client):
        goals = client.get("/api/goals").json()
        assert len(goals) == 5
        assert all(g["status"] == "completed" for g in goals)
        assert all(g["verdict_history"] for g in goals)

    def test_cost(self, client):
        cost = client.get("/api/cost").json()
        assert cost["event_count"] > 0
        assert cost["total_effective_tokens"] > 0
        assert cost["multipliers"]["cache_write"] == "1.25x"
        shares = [r["share_percent"] for r in cost["per_role"].values()]
        assert abs(sum(shares) - 100.0) < 0.5

    def test_trace_fetch_and_404(self, client, finished_engine):
        known = finished_engine.traces.list_ids()[0]
        trace = client.get(f"/api/traces/{known}").json()
        assert trace["conversation_id"] == known
        assert trace["messages"]
        assert client.get("/api/traces/c-99999").status_code == 404


class TestSteering:
    def test_directive_post_then_visible_in_list(self, client):
        created = client.post("/api/directives",
                              json={"text": "focus on chapter 2"}).json()
        assert created["text"] == "focus on chapter 2"
        listed = client.get("/api/directives").json()
        assert any(d["id"] == created["id"] for d in listed)

    def test_escalation_answer_flips_status(self, client, finished_engine):
        esc = finished_engine.escalations.file(
            "worker-9", "t-0001", "warning", "flaky toolchain"
        )
        answered = client.post(
            f"/api/escalations/{esc.id}/answer", json={"text": "retry with cache off"}
        ).json()
        assert answered["status"] == "answered"
        assert answered["response"] == "retry with cache off"
        listed = client.get("/api/escalations").json()
        byid = {e["id"]: e for e in listed}
        assert byid[esc.id]["status"] == "answered"

    def test_answer_unknown_escalation_404(self, client):
        response = client.post("/api/escalations/esc-9999/answer",
                               json={"text": "hello"})
        assert response.status_code == 404

    def test_directive_appears_in_next_planning_transcript(self, tmp_path):
        """End-to-end: POST a directive between two engine phases and find it
        in the orchestrator's next planning-round transcript."""
        manifest = write_synthetic_manifest(tmp_path / "targets.json",
                                            target_count=3, seed=7)
        config = RunConfig(
            run_dir=tmp_path / "run", targets_manifest=manifest,
            mode="simulate", seed=42, max_rounds=20,
        )
        engine = Engine(config)
        client = TestClient(create_app(RuntimeContext.from_engine(engine)))
        client.post("/api/directives", json={"text": "axiomatize nothing"})
        engine.run()
        transcripts = [engine.traces.read(c) for c in engine.traces.list_ids()]
        orch = [t for t in transcripts if t["role"] == "orchestrator"]
        assert orch and "axiomatize nothing" in json.dumps(orch[0]["messages"])


class TestEventStream:
    def test_replay_stream_carries_store_mutations(self, finished_engine):
        finished_engine.directives.submit("replayed directive")
        app = create_app(RuntimeContext.from_engine(finished_engine))
        with TestClient(app) as client:
            response = client.get(
                "/api/events?replay=true&limit=1000&timeout_s=0.2&poll_s=0.05"
            )
        body = response.text
        assert "event: ready" in body
        assert "replayed directive" in body
        assert '"stream":"directives"' in body
        assert '"stream":"tasks"' in body
        assert '"stream":"goals"' in body

    def test_live_stream_delivers_mutation_made_after_connect(self, finished_engine):
        """True push flow: a real server, a streaming client, and a store
        mutation issued only after the stream is up."""
        import threading
        import time

        import httpx
        import uvicorn

        app = create_app(RuntimeContext.from_engine(finished_engine))
        server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started and time.time() < deadline:
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        try:
            received = []
            with httpx.Client(timeout=10) as client:
                with client.stream(
                    "GET",
                    f"http://127.0.0.1:{port}/api/events?limit=1&poll_s=0.05",
                ) as response:
                    lines = response.iter_lines()
                    for line in lines:
                        if line.startswith("event: ready"):
                            finished_engine.directives.submit("live push works")
                            break
                    for line in lines:
                        received.append(line)
                        if "live push works" in line:
                            break
            assert any("live push works" in line for line in received)
        finally:
            server.should_exit = True
            thread.join(timeout=5)

    def test_sse_timeout_closes_stream(self, finished_engine):
        app = create_app(RuntimeContext.from_engine(finished_engine))
        with TestClient(app) as client:
            with client.stream(
                "GET", "/api/events?timeout_s=0.3&poll_s=0.1"
            ) as response:
                body = "".join(chunk for chunk in response.iter_text())
        assert "event: ready" in body


class TestDetachedContext:
    def test_from_run_dir_serves_finished_state(self, finished_engine):
        context = RuntimeContext.from_run_dir(finished_engine.config.run_dir)
        client = TestClient(create_app(context))
        status = client.get("/api/run").json()
        assert status["state"] == "detached"
        assert status["goals_completed"] == 5
        goals = client.get("/api/goals").json()
        assert len(goals) == 5
