"""Cross-stack check: the compiled browser client plays a real server
session end to end, and the exported log feeds the evaluation pipeline
unchanged. Skipped when the node toolchain is unavailable."""

import json
import shutil
import socket
import subprocess
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from repscope.choicelog import ChoiceLog
from repscope.learners import LearnerConfig, sequential_rollout
from repscope.policy import loo_cv_nll
from repscope.server import ServerConfig, create_app
from repscope.tasks import generate_task, task_to_json

from conftest import make_embedding

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not (FRONTEND / "dist" / "api.js").exists(),
    reason="node or the built frontend bundle is unavailable",
)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def live_server(tmp_path):
    import uvicorn

    config = ServerConfig(
        data_dir=tmp_path / "sessions",
        comprehension_questions=[{"id": "q1", "text": "options?", "answer": "2"}],
        base_payment=1.0,
        bonus_per_unit=0.01,
    )
    app = create_app(config)
    port = _free_port()
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}", app
    server.should_exit = True
    thread.join(timeout=5)


def test_ts_client_plays_full_sessions_and_pipeline_ingests(live_server, tmp_path):
    import httpx

    base_url, app = live_server
    emb = make_embedding(n=240, d=4, seed=80)
    logs = {}
    tasks = {}
    for k in range(2):
        task = generate_task(emb, "f0", "category", seed=80 + k)
        pid = f"human-{k}"
        resp = httpx.post(
            f"{base_url}/sessions",
            json={
                "participant_id": pid,
                "session_id": f"ui-{k}",
                "task": json.loads(task_to_json(task)),
            },
        )
        assert resp.status_code == 201
        proc = subprocess.run(
            ["node", str(FRONTEND / "tests" / "integration.mjs"), base_url, f"ui-{k}", str(17 + k)],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        assert "PLAYED 120" in proc.stdout
        doc = httpx.get(f"{base_url}/sessions/ui-{k}/export").json()
        log = ChoiceLog.from_json(json.dumps(doc))
        assert log.status == "completed"
        assert [r.trial for r in log.records] == list(range(120))
        logs[pid] = log
        tasks[pid] = task
        # exactly one stored submission per trial index
        assert len({r.trial for r in log.records}) == 120

    cfg = LearnerConfig(alpha_grid=(1.0,))
    preds = {
        pid: sequential_rollout(tasks[pid], emb, cfg, alpha=1.0) for pid in logs
    }
    score = loo_cv_nll(preds, logs, "category")
    assert score.n_choices == 240
    assert np.isfinite(score.total_nll)
