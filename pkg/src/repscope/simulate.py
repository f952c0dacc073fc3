"""Synthetic participants for pipeline tests and representation recovery.

An agent runs the same sequential learner the fitting side uses, over a named
representation, and samples choices from a softmax policy with an optional
lapse rate. Task outcomes are fixed by the task itself (category feedback
reveals the true label; reward tasks reveal both rewards), so the learner's
trajectory does not depend on the agent's own choices and the rollout
machinery is reused verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .choicelog import ChoiceLog, ChoiceRecord
from .embeddings import EmbeddingMatrix
from .errors import ValidationError
from .learners import LearnerConfig, TrajectoryPrediction, sequential_rollout
from .policy import NllScore, compare_representations
from .tasks import TaskSpec, generate_task, make_rng, spawn_seeds


@dataclass(frozen=True)
class AgentConfig:
    """Softmax-with-lapse policy over a sequential learner.

    temperature scales the softmax (ignored when greedy); lapse_rate is the
    probability of a uniform random choice. The stated type range for the
    lapse rate is [0, 0.5] for behaving agents, but 1.0 (pure lapse) is
    allowed because chance-level agents are part of the validation harness.
    """

    representation: str
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    temperature: float = 0.3
    greedy: bool = False
    lapse_rate: float = 0.0
    seed: int = 0
    alpha: float | None = 1.0  # fixed logistic penalty; None -> grid search

    def __post_init__(self):
        if not self.greedy and self.temperature <= 0:
            raise ValidationError("temperature must be positive unless greedy")
        if not 0.0 <= self.lapse_rate <= 1.0:
            raise ValidationError("lapse_rate must be in [0, 1]")


def _policy_prob_choose_second(values: np.ndarray, agent: AgentConfig) -> float:
    """P(choose option 1) for a pair of option values under the policy."""
    if agent.greedy:
        if values[1] > values[0]:
            p = 1.0
        elif values[1] < values[0]:
            p = 0.0
        else:
            p = 0.5  # ties break uniformly
    else:
        z = np.clip((values[1] - values[0]) / agent.temperature, -700.0, 700.0)
        p = float(1.0 / (1.0 + np.exp(-z)))
    return agent.lapse_rate * 0.5 + (1.0 - agent.lapse_rate) * p


def simulate_participant(
    task: TaskSpec,
    agent: AgentConfig,
    reps: dict[str, EmbeddingMatrix],
    *,
    participant_id: str | None = None,
) -> tuple[ChoiceLog, TrajectoryPrediction]:
    """Play one task; returns the choice log and the agent's own trajectory."""
    if agent.representation not in reps:
        raise ValidationError(f"unknown representation {agent.representation!r}")
    rep = reps[agent.representation]
    traj = sequential_rollout(
        task,
        rep,
        agent.learner,
        alpha=agent.alpha if agent.learner.kind.startswith("logistic") else None,
        representation=agent.representation,
    )
    rng = make_rng(agent.seed)
    pid = participant_id or f"agent-{agent.seed}"
    records = []
    clock_ms = 0.0
    for t, trial in enumerate(task.trials):
        if task.kind == "category":
            values = np.array([1.0 - traj.outputs[t], traj.outputs[t]])
        else:
            values = np.asarray(traj.outputs[t], dtype=np.float64)
        p_second = _policy_prob_choose_second(values, agent)
        choice = int(rng.random() < p_second)
        rt = float(rng.integers(500, 1500))
        clock_ms += rt
        if task.kind == "category":
            label = trial.outcome
            records.append(
                ChoiceRecord(
                    trial=t,
                    stimulus_ids=tuple(s.stimulus_id for s in trial.stimuli),
                    chosen_option=choice,
                    response_key="f" if choice == 0 else "j",
                    correct=bool(choice == label),
                    response_time_ms=rt,
                    received_at=_sim_timestamp(clock_ms),
                )
            )
            clock_ms += 2000.0
        else:
            rewards = tuple(trial.outcome)
            records.append(
                ChoiceRecord(
                    trial=t,
                    stimulus_ids=tuple(s.stimulus_id for s in trial.stimuli),
                    chosen_option=choice,
                    response_key="f" if choice == 0 else "j",
                    correct=bool(rewards[choice] == max(rewards)),
                    rewards=rewards,
                    obtained_reward=float(rewards[choice]),
                    response_time_ms=rt,
                    received_at=_sim_timestamp(clock_ms),
                )
            )
            clock_ms += 1500.0 + 1000.0
    log = ChoiceLog(
        session_id=f"sim-{pid}-{agent.seed:08d}",
        participant_id=pid,
        task_kind=task.kind,
        condition_feature=task.condition_feature,
        task_seed=task.seed,
        status="completed",
        records=tuple(records),
    )
    return log, traj


def _sim_timestamp(clock_ms: float) -> str:
    # deterministic simulated clock from a fixed epoch
    total_s, ms = divmod(int(clock_ms), 1000)
    minutes, seconds = divmod(total_s, 60)
    hours, minutes = divmod(minutes, 60)
    return f"2000-01-01T{hours:02d}:{minutes:02d}:{seconds:02d}.{ms:03d}Z"


def make_synthetic_candidates(
    base: EmbeddingMatrix,
    *,
    n_random: int = 3,
    noisy_copies: tuple[float, ...] = (),
    seed: int = 0,
) -> dict[str, EmbeddingMatrix]:
    """Candidate ladder: the base embedding, seeded Gaussian distractors, and
    optionally rotated/noised copies of the base at given noise levels."""
    rng = make_rng(seed)
    n, d = base.values.shape
    out = {"generator": base}
    for i in range(n_random):
        out[f"random-{i}"] = EmbeddingMatrix(
            base.stimulus_ids,
            tuple(f"g{j}" for j in range(d)),
            rng.standard_normal((n, d)),
        )
    for level in noisy_copies:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        noisy = base.values @ q + level * rng.standard_normal((n, d))
        out[f"noisy-{level:g}"] = EmbeddingMatrix(
            base.stimulus_ids, tuple(f"n{j}" for j in range(d)), noisy
        )
    return out


@dataclass(frozen=True)
class RecoveryResult:
    ranking: tuple[NllScore, ...]
    generating: str
    generating_rank: int  # 1-based
    margin: float  # runner-up total NLL minus the generating NLL
    n_agents: int
    seed: int

    def summary(self) -> str:
        lines = [
            f"generating representation: {self.generating} "
            f"(rank {self.generating_rank} of {len(self.ranking)}, margin {self.margin:+.2f} nats)"
        ]
        for i, s in enumerate(self.ranking, start=1):
            lines.append(
                f"  {i}. {s.representation}: NLL {s.total_nll:.2f} "
                f"(chance {s.chance_nll:.2f})"
            )
        return "\n".join(lines)


def recovery_experiment(
    generating: str,
    candidates: dict[str, EmbeddingMatrix],
    *,
    feature: str,
    kind: str,
    n_agents: int,
    agent: AgentConfig | None = None,
    fit_config: LearnerConfig | None = None,
    seed: int = 0,
    n_workers: int = 1,
) -> RecoveryResult:
    """Simulate agents on the generating representation, then check that the
    comparison pipeline ranks it lowest-NLL among the candidates."""
    if generating not in candidates:
        raise ValidationError(f"candidates must include {generating!r}")
    learner_kind = "logistic_l2" if kind == "category" else "bayes_ridge"
    if agent is None:
        agent = AgentConfig(
            representation=generating,
            learner=LearnerConfig(kind=learner_kind, alpha_grid=(1.0,)),
            temperature=0.2 if kind == "category" else 8.0,
            lapse_rate=0.02,
        )
    if fit_config is None:
        fit_config = LearnerConfig(kind=learner_kind, alpha_grid=(1.0,))
    task_seeds = spawn_seeds(seed, n_agents)
    agent_seeds = spawn_seeds(seed + 1, n_agents)
    gen_rep = candidates[generating]

    def one_agent(i):
        task = generate_task(gen_rep, feature, kind, task_seeds[i])
        cfg = AgentConfig(
            representation=agent.representation,
            learner=agent.learner,
            temperature=agent.temperature,
            greedy=agent.greedy,
            lapse_rate=agent.lapse_rate,
            seed=agent_seeds[i],
            alpha=agent.alpha,
        )
        log, traj = simulate_participant(
            task, cfg, candidates, participant_id=f"agent-{i:03d}"
        )
        return task, log, traj

    if n_workers > 1:
        triples = Parallel(n_jobs=n_workers, prefer="processes")(
            delayed(one_agent)(i) for i in range(n_agents)
        )
    else:
        triples = [one_agent(i) for i in range(n_agents)]
    tasks = {log.participant_id: task for task, log, _ in triples}
    logs = {log.participant_id: log for _, log, _ in triples}
    # agent trajectories double as the generating representation's rollouts
    # when the fitting config matches (rollouts are deterministic)
    precomputed = {}
    fit_alpha = fit_config.alpha_grid[0] if len(fit_config.alpha_grid) == 1 else None
    if (
        agent.representation == generating
        and agent.learner == fit_config
        and (kind != "category" or agent.alpha == fit_alpha)
    ):
        precomputed = {generating: {log.participant_id: t for _, log, t in triples}}
    ranking = compare_representations(
        candidates, logs, tasks, fit_config, n_workers=n_workers, precomputed=precomputed
    )
    names = [s.representation for s in ranking]
    rank = names.index(generating) + 1
    gen_total = ranking[rank - 1].total_nll
    others = [s.total_nll for s in ranking if s.representation != generating]
    margin = (min(others) - gen_total) if others else 0.0
    return RecoveryResult(
        ranking=tuple(ranking),
        generating=generating,
        generating_rank=rank,
        margin=float(margin),
        n_agents=n_agents,
        seed=seed,
    )
