import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from repscope.choicelog import ChoiceLog
from repscope.learners import LearnerConfig
from repscope.policy import loo_cv_nll, policy_rows
from repscope.server import ServerConfig, SessionStore, create_app
from repscope.tasks import generate_task, task_to_json

from conftest import make_embedding


@pytest.fixture
def category_task():
    emb = make_embedding(n=240, d=3, seed=60)
    return generate_task(emb, "f0", "category", seed=60)


@pytest.fixture
def reward_task():
    emb = make_embedding(n=240, d=3, seed=61)
    return generate_task(emb, "f0", "reward", seed=61)


def make_client(tmp_path, **config_kwargs):
    config = ServerConfig(data_dir=tmp_path / "sessions", **config_kwargs)
    app = create_app(config)
    return TestClient(app), config


def create_session(client, task, participant="alice", session_id=None):
    body = {"participant_id": participant, "task": json.loads(task_to_json(task))}
    if session_id:
        body["session_id"] = session_id
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()


class TestSessionLifecycle:
    def test_create_category_session(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        assert view["n_trials"] == 120
        assert view["current_trial"] == 0 and view["status"] == "active"

    def test_create_reward_session(self, tmp_path, reward_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, reward_task)
        assert view["n_trials"] == 60

    def test_duplicate_session_id_conflicts(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        create_session(client, category_task, session_id="dup")
        resp = client.post(
            "/sessions",
            json={
                "participant_id": "bob",
                "session_id": "dup",
                "task": json.loads(task_to_json(category_task)),
            },
        )
        assert resp.status_code == 409
        assert resp.json()["code"] == "conflict"

    def test_unknown_session_404(self, tmp_path):
        client, _ = make_client(tmp_path)
        resp = client.get("/sessions/nope")
        assert resp.status_code == 404
        body = resp.json()
        assert set(body) == {"code", "message", "detail"}


class TestTrialPayload:
    def test_payload_hides_outcomes(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        payload = client.get(f"/sessions/{view['session_id']}/trials/0").json()
        text = json.dumps(payload)
        assert "outcome" not in text and "loading" not in text
        assert payload["stimuli"][0]["image_url"].startswith("/stimuli/")
        assert payload["options"] == ["Option A", "Option B"]

    def test_out_of_order_request_rejected(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        resp = client.get(f"/sessions/{view['session_id']}/trials/1")
        assert resp.status_code == 409
        assert resp.json()["code"] == "out_of_order"

    def test_image_resolves_against_manifest(self, tmp_path, category_task):
        img = tmp_path / "img.png"
        img.write_bytes(b"\x89PNG\r\n\x1a\n fake")
        sid = category_task.trials[0].stimuli[0].stimulus_id
        client, _ = make_client(tmp_path, image_manifest={sid: img})
        view = create_session(client, category_task)
        payload = client.get(f"/sessions/{view['session_id']}/trials/0").json()
        resp = client.get(payload["stimuli"][0]["image_url"])
        assert resp.status_code == 200
        assert resp.content.startswith(b"\x89PNG")


class TestChoices:
    def test_category_feedback_contract(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        label = category_task.trials[0].outcome
        resp = client.post(
            f"/sessions/{view['session_id']}/choices",
            json={"trial": 0, "chosen_option": label, "response_time_ms": 432.0},
        )
        fb = resp.json()
        assert fb["correct"] is True
        assert fb["feedback_ms"] == 2000

    def test_reward_feedback_contract(self, tmp_path, reward_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, reward_task)
        resp = client.post(
            f"/sessions/{view['session_id']}/choices",
            json={"trial": 0, "chosen_option": 1, "response_time_ms": 250.0},
        )
        fb = resp.json()
        assert fb["feedback_ms"] == 1500 and fb["iti_ms"] == 1000
        assert fb["rewards"] == list(reward_task.trials[0].outcome)

    def test_resubmission_is_idempotent(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        sid = view["session_id"]
        for t in range(6):
            client.post(
                f"/sessions/{sid}/choices", json={"trial": t, "chosen_option": 0}
            )
        first = client.post(f"/sessions/{sid}/choices", json={"trial": 5, "chosen_option": 1})
        again = client.post(f"/sessions/{sid}/choices", json={"trial": 5, "chosen_option": 1})
        assert first.json() == again.json()
        assert client.get(f"/sessions/{sid}").json()["current_trial"] == 6

    def test_invalid_option_rejected(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        resp = client.post(
            f"/sessions/{view['session_id']}/choices",
            json={"trial": 0, "chosen_option": 3},
        )
        assert resp.status_code == 400

    def test_payment_updates_with_performance(self, tmp_path, category_task):
        client, _ = make_client(tmp_path, base_payment=1.5, bonus_per_unit=0.05)
        view = create_session(client, category_task)
        assert view["estimated_payment"] == 1.5
        sid = view["session_id"]
        label = category_task.trials[0].outcome
        fb = client.post(
            f"/sessions/{sid}/choices", json={"trial": 0, "chosen_option": label}
        ).json()
        assert fb["estimated_payment"] == pytest.approx(1.55)


class TestComprehensionGate:
    QUESTIONS = [
        {"id": "q1", "text": "How many options are there?", "answer": "2"},
    ]

    def test_gate_blocks_until_passed(self, tmp_path, category_task):
        client, _ = make_client(tmp_path, comprehension_questions=self.QUESTIONS)
        view = create_session(client, category_task)
        sid = view["session_id"]
        assert client.get(f"/sessions/{sid}/trials/0").status_code == 409
        fail = client.post(
            f"/sessions/{sid}/comprehension", json={"answers": {"q1": "7"}}
        )
        assert fail.json()["passed"] is False
        assert client.get(f"/sessions/{sid}/trials/0").status_code == 409
        ok = client.post(
            f"/sessions/{sid}/comprehension", json={"answers": {"q1": "2"}}
        )
        assert ok.json()["passed"] is True
        assert client.get(f"/sessions/{sid}/trials/0").status_code == 200


class TestExportAndRecovery:
    def play_category(self, client, task, sid, n=None):
        rng = np.random.default_rng(5)
        for t in range(n if n is not None else task.n_trials):
            client.post(
                f"/sessions/{sid}/choices",
                json={
                    "trial": t,
                    "chosen_option": int(rng.integers(2)),
                    "response_time_ms": float(rng.integers(300, 900)),
                },
            )

    def test_completed_export_is_gapless(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        self.play_category(client, category_task, view["session_id"])
        doc = client.get(f"/sessions/{view['session_id']}/export").json()
        log = ChoiceLog.from_json(json.dumps(doc))
        assert log.status == "completed"
        assert log.n_trials == 120
        assert [r.trial for r in log.records] == list(range(120))

    def test_abandoned_export_is_partial(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        sid = view["session_id"]
        self.play_category(client, category_task, sid, n=10)
        client.post(f"/sessions/{sid}/abandon")
        doc = client.get(f"/sessions/{sid}/export").json()
        assert doc["status"] == "abandoned"
        assert len(doc["records"]) == 10
        assert client.get(f"/sessions/{sid}/trials/10").status_code == 410

    def test_reexport_byte_identical(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        self.play_category(client, category_task, view["session_id"], n=7)
        a = client.get(f"/sessions/{view['session_id']}/export").text
        b = client.get(f"/sessions/{view['session_id']}/export").text
        assert a == b

    def test_restart_recovers_state_idempotently(self, tmp_path, category_task):
        client, config = make_client(tmp_path)
        view = create_session(client, category_task)
        sid = view["session_id"]
        self.play_category(client, category_task, sid, n=4)
        before = client.get(f"/sessions/{sid}/export").text
        # simulated crash/restart: a fresh app over the same data directory
        app2 = create_app(config)
        client2 = TestClient(app2)
        assert client2.get(f"/sessions/{sid}").json()["current_trial"] == 4
        replay = client2.post(
            f"/sessions/{sid}/choices", json={"trial": 3, "chosen_option": 0}
        )
        assert replay.status_code == 200
        assert client2.get(f"/sessions/{sid}").json()["current_trial"] == 4
        after = client2.get(f"/sessions/{sid}/export").text
        assert json.loads(before)["records"] == json.loads(after)["records"]

    def test_consent_recorded(self, tmp_path, category_task):
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        sid = view["session_id"]
        client.post(f"/sessions/{sid}/consent", json={"use_data": True})
        assert client.get(f"/sessions/{sid}").json()["consent"] is True

    def test_export_feeds_policy_pipeline_unchanged(self, tmp_path, category_task):
        from repscope.learners import sequential_rollout

        emb = make_embedding(n=240, d=3, seed=60)
        client, _ = make_client(tmp_path)
        view = create_session(client, category_task)
        self.play_category(client, category_task, view["session_id"])
        doc = client.get(f"/sessions/{view['session_id']}/export").json()
        log = ChoiceLog.from_json(json.dumps(doc))
        traj = sequential_rollout(
            category_task, emb, LearnerConfig(alpha_grid=(1.0,)), alpha=1.0
        )
        x, y = policy_rows(traj, log)
        assert x.shape == (120,)
        logs = {log.participant_id: log}
        # needs two groups for the mixed model: duplicate as a second participant
        log2 = ChoiceLog.from_json(json.dumps({**doc, "participant_id": "bob", "session_id": "s2"}))
        score = loo_cv_nll(
            {"alice": traj, "bob": traj}, {"alice": log, "bob": log2}, "category"
        )
        assert score.n_choices == 240
        assert np.isfinite(score.total_nll)
