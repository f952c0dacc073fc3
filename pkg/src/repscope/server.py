"""HTTP session server for live experiment sessions.

Hosts tasks for the browser UI: serves trials and stimulus images, records
timed choices, enforces protocol order, and exports logs in the same schema
the simulator emits. Ground truth never leaves the server before the
corresponding choice is recorded; feedback display durations are
server-prescribed constants the client must honor.

Persistence is an append-only JSONL event file per session: every accepted
submission is flushed to disk before the response is sent, so a crash can at
worst lose an unacknowledged response, and restart recovery is log replay.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .choicelog import ChoiceLog, ChoiceRecord
from .embeddings import load_manifest, load_representations
from .errors import RepscopeError, ValidationError
from .tasks import TaskSpec, generate_task, task_from_json, task_to_json

CATEGORY_FEEDBACK_MS = 2000
REWARD_FEEDBACK_MS = 1500
REWARD_ITI_MS = 1000


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail
        super().__init__(message)


@dataclass
class ServerConfig:
    data_dir: Path
    image_manifest: dict[str, Path] = field(default_factory=dict)
    embeddings_manifest: Path | None = None
    comprehension_questions: list[dict] = field(default_factory=list)
    base_payment: float = 0.0
    bonus_per_unit: float = 0.0  # per correct choice / per obtained reward point
    category_labels: tuple[str, str] = ("Option A", "Option B")

    @staticmethod
    def from_file(path) -> "ServerConfig":
        doc = json.loads(Path(path).read_text())
        base = Path(path).parent
        image_manifest = {}
        if doc.get("image_manifest"):
            m = json.loads((base / doc["image_manifest"]).read_text())
            image_manifest = {
                k: (base / v if not Path(v).is_absolute() else Path(v))
                for k, v in m.items()
            }
        return ServerConfig(
            data_dir=base / doc.get("data_dir", "sessions"),
            image_manifest=image_manifest,
            embeddings_manifest=(
                base / doc["embeddings_manifest"]
                if doc.get("embeddings_manifest")
                else None
            ),
            comprehension_questions=doc.get("comprehension_questions", []),
            base_payment=doc.get("base_payment", 0.0),
            bonus_per_unit=doc.get("bonus_per_unit", 0.0),
            category_labels=tuple(doc.get("category_labels", ("Option A", "Option B"))),
        )


@dataclass
class SessionState:
    session_id: str
    participant_id: str
    task: TaskSpec
    current_trial: int = 0
    status: str = "active"
    comprehension_passed: bool = False
    consent: bool | None = None
    created_at: str = ""
    updated_at: str = ""
    records: list[dict] = field(default_factory=list)
    feedbacks: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def performance_units(self) -> float:
        if self.task.kind == "category":
            return float(sum(1 for r in self.records if r["correct"]))
        return float(sum(r["obtained_reward"] for r in self.records))


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


class SessionStore:
    """Append-only JSONL persistence with restart recovery by replay."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionState] = {}
        self._load_existing()

    def _path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.jsonl"

    def _load_existing(self):
        for p in sorted(self.data_dir.glob("*.jsonl")):
            state = None
            with open(p) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    event = json.loads(line)
                    state = self._apply(state, event)
            if state is not None:
                self.sessions[state.session_id] = state

    def _apply(self, state, event):
        kind = event["type"]
        if kind == "created":
            state = SessionState(
                session_id=event["session_id"],
                participant_id=event["participant_id"],
                task=task_from_json(json.dumps(event["task"])),
                created_at=event["at"],
                updated_at=event["at"],
            )
            return state
        if state is None:
            raise ValidationError("event log does not start with 'created'")
        state.updated_at = event["at"]
        if kind == "comprehension" and event["passed"]:
            state.comprehension_passed = True
        elif kind == "choice":
            state.records.append(event["record"])
            state.feedbacks.append(event["feedback"])
            state.current_trial = event["record"]["trial"] + 1
            if state.current_trial == state.task.n_trials:
                state.status = "completed"
        elif kind == "consent":
            state.consent = bool(event["use_data"])
        elif kind == "abandoned":
            if state.status == "active":
                state.status = "abandoned"
        return state

    def append(self, session_id: str, event: dict):
        event = {**event, "at": _utcnow()}
        with open(self._path(session_id), "a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return event

    def create(self, session_id, participant_id, task: TaskSpec) -> SessionState:
        if session_id in self.sessions:
            raise ApiError(409, "conflict", f"session {session_id!r} already exists")
        event = self.append(
            session_id,
            {
                "type": "created",
                "session_id": session_id,
                "participant_id": participant_id,
                "task": json.loads(task_to_json(task)),
            },
        )
        state = self._apply(None, event)
        self.sessions[session_id] = state
        return state

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        return state


def session_view(state: SessionState, config: ServerConfig) -> dict:
    return {
        "session_id": state.session_id,
        "participant_id": state.participant_id,
        "task_kind": state.task.kind,
        "n_trials": state.task.n_trials,
        "current_trial": state.current_trial,
        "status": state.status,
        "comprehension_required": bool(config.comprehension_questions),
        "comprehension_passed": state.comprehension_passed,
        "consent": state.consent,
        "estimated_payment": round(
            config.base_payment + config.bonus_per_unit * state.performance_units(), 4
        ),
        "created_at": state.created_at,
        "updated_at": state.updated_at,
    }


def build_choice_log(state: SessionState) -> ChoiceLog:
    records = tuple(
        ChoiceRecord(
            trial=r["trial"],
            stimulus_ids=tuple(r["stimulus_ids"]),
            chosen_option=r["chosen_option"],
            response_key=r.get("response_key"),
            correct=r.get("correct"),
            rewards=tuple(r["rewards"]) if r.get("rewards") is not None else None,
            obtained_reward=r.get("obtained_reward"),
            response_time_ms=r["response_time_ms"],
            received_at=r["received_at"],
        )
        for r in state.records
    )
    return ChoiceLog(
        session_id=state.session_id,
        participant_id=state.participant_id,
        task_kind=state.task.kind,
        condition_feature=state.task.condition_feature,
        task_seed=state.task.seed,
        status=state.status,
        records=records,
    )


def create_app(config: ServerConfig) -> FastAPI:
    app = FastAPI(title="repscope session server")
    store = SessionStore(config.data_dir)
    representations = None
    if config.embeddings_manifest is not None:
        representations = load_representations(
            load_manifest(config.embeddings_manifest)
        )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RepscopeError)
    async def _domain_error(request: Request, exc: RepscopeError):
        return JSONResponse(
            status_code=400,
            content={"code": "validation", "message": str(exc), "detail": None},
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        participant_id = body.get("participant_id")
        if not participant_id:
            raise ApiError(400, "validation", "participant_id is required")
        session_id = body.get("session_id") or f"sess-{uuid.uuid4().hex[:12]}"
        if "task" in body:
            task = task_from_json(json.dumps(body["task"]))
        elif "task_config" in body:
            cfg = body["task_config"]
            if representations is None:
                raise ApiError(
                    400, "validation", "server has no embeddings manifest loaded"
                )
            rep = representations.get(cfg.get("representation"))
            if rep is None:
                raise ApiError(
                    400,
                    "validation",
                    f"unknown representation {cfg.get('representation')!r}",
                )
            try:
                task = generate_task(
                    rep,
                    cfg["feature"],
                    cfg.get("kind", "category"),
                    int(cfg.get("seed", 0)),
                    n_bins=int(cfg.get("n_bins", 5)),
                )
            except KeyError as exc:
                raise ApiError(400, "validation", f"missing task_config field {exc}")
        else:
            raise ApiError(400, "validation", "provide 'task' or 'task_config'")
        state = store.create(session_id, participant_id, task)
        return session_view(state, config)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_view(store.get(session_id), config)

    @app.get("/sessions/{session_id}/trials/{trial_index}")
    def get_trial(session_id: str, trial_index: int):
        state = store.get(session_id)
        if state.status == "completed":
            raise ApiError(410, "gone", "session is completed")
        if state.status == "abandoned":
            raise ApiError(410, "gone", "session was abandoned")
        if config.comprehension_questions and not state.comprehension_passed:
            raise ApiError(
                409, "comprehension_required", "pass the comprehension check first"
            )
        if trial_index != state.current_trial:
            raise ApiError(
                409,
                "out_of_order",
                f"current trial is {state.current_trial}, not {trial_index}",
            )
        trial = state.task.trials[trial_index]
        payload = {
            "session_id": session_id,
            "trial": trial_index,
            "n_trials": state.task.n_trials,
            "kind": state.task.kind,
            "stimuli": [
                {
                    "stimulus_id": s.stimulus_id,
                    "position": pos,
                    "image_url": f"/stimuli/{s.image_ref or s.stimulus_id}",
                }
                for pos, s in enumerate(trial.stimuli)
            ],
        }
        if state.task.kind == "category":
            payload["options"] = list(config.category_labels)
        return payload

    @app.post("/sessions/{session_id}/choices")
    def submit_choice(session_id: str, body: dict):
        state = store.get(session_id)
        with state.lock:
            trial_index = body.get("trial")
            if not isinstance(trial_index, int):
                raise ApiError(400, "validation", "integer 'trial' is required")
            if trial_index < state.current_trial:
                # idempotent replay of the originally recorded feedback
                return state.feedbacks[trial_index]
            if state.status != "active":
                raise ApiError(410, "gone", f"session is {state.status}")
            if trial_index != state.current_trial:
                raise ApiError(
                    409,
                    "out_of_order",
                    f"current trial is {state.current_trial}, not {trial_index}",
                )
            chosen = body.get("chosen_option")
            if chosen not in (0, 1):
                raise ApiError(400, "validation", "chosen_option must be 0 or 1")
            trial = state.task.trials[trial_index]
            if state.task.kind == "category":
                label = trial.outcome
                correct = chosen == label
                record = {
                    "trial": trial_index,
                    "stimulus_ids": [s.stimulus_id for s in trial.stimuli],
                    "chosen_option": chosen,
                    "response_key": body.get("response_key"),
                    "correct": bool(correct),
                    "rewards": None,
                    "obtained_reward": None,
                    "response_time_ms": float(body.get("response_time_ms", 0.0)),
                    "received_at": _utcnow(),
                }
                feedback = {
                    "trial": trial_index,
                    "correct": bool(correct),
                    "feedback_ms": CATEGORY_FEEDBACK_MS,
                }
            else:
                rewards = list(trial.outcome)
                record = {
                    "trial": trial_index,
                    "stimulus_ids": [s.stimulus_id for s in trial.stimuli],
                    "chosen_option": chosen,
                    "response_key": body.get("response_key"),
                    "correct": bool(rewards[chosen] == max(rewards)),
                    "rewards": rewards,
                    "obtained_reward": float(rewards[chosen]),
                    "response_time_ms": float(body.get("response_time_ms", 0.0)),
                    "received_at": _utcnow(),
                }
                feedback = {
                    "trial": trial_index,
                    "rewards": rewards,
                    "chosen_option": chosen,
                    "feedback_ms": REWARD_FEEDBACK_MS,
                    "iti_ms": REWARD_ITI_MS,
                }
            store.append(
                session_id, {"type": "choice", "record": record, "feedback": feedback}
            )
            state.records.append(record)
            state.feedbacks.append(feedback)
            state.current_trial += 1
            state.updated_at = _utcnow()
            if state.current_trial == state.task.n_trials:
                state.status = "completed"
            feedback = {
                **feedback,
                "estimated_payment": round(
                    config.base_payment
                    + config.bonus_per_unit * state.performance_units(),
                    4,
                ),
                "session_status": state.status,
            }
            state.feedbacks[-1] = feedback
            return feedback

    @app.post("/sessions/{session_id}/comprehension")
    def comprehension(session_id: str, body: dict):
        state = store.get(session_id)
        answers = body.get("answers", {})
        passed = all(
            str(answers.get(q["id"], "")).strip().lower()
            == str(q["answer"]).strip().lower()
            for q in config.comprehension_questions
        )
        store.append(session_id, {"type": "comprehension", "passed": passed})
        if passed:
            state.comprehension_passed = True
        return {
            "passed": passed,
            "questions": [
                {"id": q["id"], "text": q.get("text", "")}
                for q in config.comprehension_questions
            ],
        }

    @app.post("/sessions/{session_id}/consent")
    def consent(session_id: str, body: dict):
        state = store.get(session_id)
        use_data = bool(body.get("use_data"))
        store.append(session_id, {"type": "consent", "use_data": use_data})
        state.consent = use_data
        return {"recorded": True, "use_data": use_data}

    @app.post("/sessions/{session_id}/abandon")
    def abandon(session_id: str):
        state = store.get(session_id)
        with state.lock:
            if state.status == "active":
                store.append(session_id, {"type": "abandoned"})
                state.status = "abandoned"
        return session_view(state, config)

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        state = store.get(session_id)
        return json.loads(build_choice_log(state).to_json())

    @app.get("/stimuli/{stimulus_id}")
    def stimulus(stimulus_id: str):
        path = config.image_manifest.get(stimulus_id)
        if path is None or not Path(path).exists():
            raise ApiError(404, "not_found", f"no image for {stimulus_id!r}")
        return FileResponse(path)

    app.state.store = store
    app.state.config = config
    return app


def run_server(config: ServerConfig, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port)
