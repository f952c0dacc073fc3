"""Driving the experiment session server end to end (in process).

The server owns all ground truth and timing constants: trial payloads carry
no outcomes, feedback durations come back with each submission, duplicate
submissions replay the original feedback, and the exported log is
schema-identical to the simulator's output.
"""

import json
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from repscope.embeddings import EmbeddingMatrix
from repscope.choicelog import ChoiceLog
from repscope.server import ServerConfig, create_app
from repscope.tasks import generate_task, task_to_json

rng = np.random.default_rng(6)
base = EmbeddingMatrix(
    tuple(f"s{i:04d}" for i in range(240)),
    ("f0", "f1"),
    rng.standard_normal((240, 2)),
)
task = generate_task(base, "f0", "reward", seed=9)

with tempfile.TemporaryDirectory() as tmp:
    config = ServerConfig(
        data_dir=Path(tmp) / "sessions",
        base_payment=2.0,
        bonus_per_unit=0.001,  # per obtained reward point
        comprehension_questions=[
            {"id": "q1", "text": "How many options appear per trial?", "answer": "2"}
        ],
    )
    client = TestClient(create_app(config))

    view = client.post("/sessions", json={
        "participant_id": "demo",
        "task": json.loads(task_to_json(task)),
    }).json()
    sid = view["session_id"]
    print(f"created session {sid}: {view['n_trials']} {view['task_kind']} trials")

    blocked = client.get(f"/sessions/{sid}/trials/0")
    print("before comprehension:", blocked.status_code, blocked.json()["code"])
    client.post(f"/sessions/{sid}/comprehension", json={"answers": {"q1": "2"}})

    for t in range(3):
        payload = client.get(f"/sessions/{sid}/trials/{t}").json()
        assert "outcome" not in json.dumps(payload)
        fb = client.post(f"/sessions/{sid}/choices", json={
            "trial": t, "chosen_option": 1, "response_time_ms": 640.0,
        }).json()
        print(f"trial {t}: rewards {fb['rewards']}, show {fb['feedback_ms']} ms, "
              f"ITI {fb['iti_ms']} ms, payment so far {fb['estimated_payment']}")

    replay = client.post(f"/sessions/{sid}/choices",
                         json={"trial": 2, "chosen_option": 0}).json()
    print("resubmitting trial 2 replays the original feedback:",
          replay["chosen_option"] == 1)

    client.post(f"/sessions/{sid}/consent", json={"use_data": True})
    client.post(f"/sessions/{sid}/abandon")
    doc = client.get(f"/sessions/{sid}/export").json()
    log = ChoiceLog.from_json(json.dumps(doc))
    print(f"export: status {log.status!r} with {log.n_trials} gapless records, "
          "ready for the comparison pipeline")
