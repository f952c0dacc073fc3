"""Per-participant choice logs.

One schema serves human sessions recorded by the HTTP server and synthetic
agents from the simulator, so either source feeds the evaluation pipeline
unchanged. Category records store the chosen category index; reward records
store the chosen position (0 = left, 1 = right) and both revealed rewards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError


@dataclass(frozen=True)
class ChoiceRecord:
    trial: int
    stimulus_ids: tuple[str, ...]
    chosen_option: int
    response_time_ms: float
    received_at: str
    response_key: str | None = None
    correct: bool | None = None
    rewards: tuple[float, ...] | None = None
    obtained_reward: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "stimulus_ids", tuple(self.stimulus_ids))
        if self.rewards is not None:
            object.__setattr__(self, "rewards", tuple(float(v) for v in self.rewards))
        if self.chosen_option not in (0, 1):
            raise ValidationError(
                f"trial {self.trial}: chosen_option must be 0 or 1, got {self.chosen_option}"
            )


@dataclass(frozen=True)
class ChoiceLog:
    session_id: str
    participant_id: str
    task_kind: str
    condition_feature: str
    task_seed: int
    status: str
    records: tuple[ChoiceRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for i, rec in enumerate(self.records):
            if rec.trial != i:
                raise ValidationError(
                    f"choice records must be gapless from 0; got trial {rec.trial} at position {i}"
                )

    @property
    def n_trials(self) -> int:
        return len(self.records)

    def to_json(self) -> str:
        return json.dumps(
            {
                "session_id": self.session_id,
                "participant_id": self.participant_id,
                "task_kind": self.task_kind,
                "condition_feature": self.condition_feature,
                "task_seed": self.task_seed,
                "status": self.status,
                "records": [
                    {
                        "trial": r.trial,
                        "stimulus_ids": list(r.stimulus_ids),
                        "chosen_option": r.chosen_option,
                        "response_key": r.response_key,
                        "correct": r.correct,
                        "rewards": list(r.rewards) if r.rewards is not None else None,
                        "obtained_reward": r.obtained_reward,
                        "response_time_ms": r.response_time_ms,
                        "received_at": r.received_at,
                    }
                    for r in self.records
                ],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "ChoiceLog":
        doc = json.loads(text)
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
            for r in doc["records"]
        )
        return ChoiceLog(
            session_id=doc["session_id"],
            participant_id=doc["participant_id"],
            task_kind=doc["task_kind"],
            condition_feature=doc["condition_feature"],
            task_seed=doc["task_seed"],
            status=doc["status"],
            records=records,
        )


def save_log(log: ChoiceLog, path) -> None:
    Path(path).write_text(log.to_json())


def load_log(path) -> ChoiceLog:
    return ChoiceLog.from_json(Path(path).read_text())


def load_logs(directory) -> dict[str, ChoiceLog]:
    """All *.json choice logs in a directory, keyed by participant id."""
    out: dict[str, ChoiceLog] = {}
    for p in sorted(Path(directory).glob("*.json")):
        log = load_log(p)
        if log.participant_id in out:
            raise ValidationError(f"duplicate participant id {log.participant_id!r}")
        out[log.participant_id] = log
    return out
