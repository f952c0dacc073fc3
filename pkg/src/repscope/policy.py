"""Policy estimation and cross-validated model comparison.

The policy model regresses a learner's per-trial estimates onto the recorded
choices with a mixed-effects logistic regression in which the estimate is the
only fixed and random predictor (no intercepts: a constant-0.5 predictor must
score exactly chance). Representations are ranked by leave-one-trial-out
cross-validated negative log-likelihood, each choice serving once as the
test set with the policy model refit on all remaining choices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import cho_factor
from scipy.special import expit

from .choicelog import ChoiceLog
from .embeddings import EmbeddingMatrix
from .errors import ValidationError
from .glmm import (
    GlmmFit,
    GlmmSpec,
    LaplaceProblem,
    fit_glmm,
    fit_glmm_arrays,
    numerical_hessian,
    refit_warm,
)
from .learners import NLL_CLIP, LearnerConfig, TrajectoryPrediction, sequential_rollout
from .tasks import TaskSpec


@dataclass(frozen=True)
class NllScore:
    """Cross-validated policy fit of one representation (lower is better)."""

    representation: str | None
    learner: str
    total_nll: float
    n_choices: int
    chance_nll: float
    per_participant: dict[str, float]
    flagged_folds: tuple[int, ...]
    audit_failures: int
    audited_folds: int
    fold_nlls: tuple[float, ...] = ()  # per-choice held-out NLLs, fold order

    def to_dict(self) -> dict:
        return {
            "representation": self.representation,
            "learner": self.learner,
            "total_nll": self.total_nll,
            "n_choices": self.n_choices,
            "chance_nll": self.chance_nll,
            "per_participant": self.per_participant,
            "flagged_folds": list(self.flagged_folds),
            "audit_failures": self.audit_failures,
            "audited_folds": self.audited_folds,
        }


def policy_rows(
    prediction: TrajectoryPrediction, log: ChoiceLog
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial (predictor, response) pairs for the policy model.

    Category: learner probability of class 1 predicting the chosen class.
    Reward: right-minus-left value estimate predicting a right choice.
    """
    if prediction.kind != log.task_kind:
        raise ValidationError(
            f"prediction kind {prediction.kind!r} does not match log {log.task_kind!r}"
        )
    if len(prediction.outputs) != log.n_trials:
        raise ValidationError(
            f"{len(prediction.outputs)} predictions for {log.n_trials} recorded trials"
        )
    y = np.array([r.chosen_option for r in log.records], dtype=np.float64)
    if prediction.kind == "category":
        x = np.asarray(prediction.outputs, dtype=np.float64)
    else:
        out = np.asarray(prediction.outputs, dtype=np.float64)
        x = out[:, 1] - out[:, 0]
    return x, y


def _clip_nll(p: float, y: float) -> float:
    p = min(max(p, NLL_CLIP), 1.0 - NLL_CLIP)
    return -float(np.log(p if y == 1.0 else 1.0 - p))


def _pooled_slope_prob(x_tr, y_tr, x_test) -> float:
    """Slope-only logistic fallback (random effects dropped)."""
    beta = 0.0
    for _ in range(50):
        mu = expit(beta * x_tr)
        g = float(x_tr @ (mu - y_tr)) + 1e-9 * beta
        if abs(g) < 1e-9:
            break
        h = float((x_tr * x_tr) @ (mu * (1 - mu))) + 1e-9
        beta -= g / h
        beta = float(np.clip(beta, -1e3, 1e3))
    return float(expit(beta * x_test))


def loo_cv_nll(
    predictions: dict[str, TrajectoryPrediction],
    choices: dict[str, ChoiceLog],
    task_kind: str,
    *,
    representation: str | None = None,
    gtol: float = 1e-6,
    audit_fraction: float = 0.01,
) -> NllScore:
    """Leave-one-trial-out cross-validated NLL of the policy model.

    Every fold refits the mixed model on the remaining choices (predictor
    re-standardized on the training rows only) and scores the held-out choice
    conditionally on the participant's posterior-mode random effect. Folds
    are warm-started from the full-data optimum but verified against the same
    gradient tolerance as a cold start; a deterministic subset is spot-audited
    against full cold fits. Failing folds drop the random effects; a
    degenerate one-class fold falls back to an intercept-only rate; anything
    still failing scores at chance. Held-out probabilities are clipped to
    [1e-6, 1 - 1e-6] before the log.
    """
    pids = sorted(choices)
    if set(predictions) < set(choices):
        missing = sorted(set(choices) - set(predictions))
        raise ValidationError(f"missing predictions for participants {missing}")
    xs, ys, gs = [], [], []
    learner = None
    for gi, pid in enumerate(pids):
        x, y = policy_rows(predictions[pid], choices[pid])
        if choices[pid].task_kind != task_kind:
            raise ValidationError(f"log {pid} is not a {task_kind} log")
        learner = predictions[pid].learner
        xs.append(x)
        ys.append(y)
        gs.append(np.full(x.size, gi, dtype=np.intp))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    g = np.concatenate(gs)
    n = x.size
    m = len(pids)

    # full-data fit for warm starts and the fold preconditioner
    mean_full = float(x.mean())
    sd_full = float(x.std(ddof=1)) if n > 1 else 1.0
    sd_full = sd_full if sd_full > 0 else 1.0
    xs_full = ((x - mean_full) / sd_full)[:, None]
    full_problem = LaplaceProblem(xs_full, xs_full, y, g, m)
    full = fit_glmm_arrays(full_problem, gtol=gtol)
    hess_full = numerical_hessian(full_problem, full.params)
    try:
        hess_factor = cho_factor(hess_full, lower=True)
    except np.linalg.LinAlgError:
        hess_full = np.eye(full.params.size)
        hess_factor = cho_factor(hess_full, lower=True)

    # per-fold scaling stats (training rows only), vectorized
    S = float(x.sum())
    SS = float(x @ x)
    means = (S - x) / (n - 1)
    variances = np.maximum(SS - x * x - (n - 1) * means * means, 0.0) / max(n - 2, 1)
    sds = np.sqrt(variances)
    sds[sds == 0.0] = 1.0
    total_ones = float(y.sum())
    ones_left = total_ones - (y == 1.0)
    degenerate = (ones_left == 0.0) | (ones_left == n - 1)

    nll = np.empty(n)
    flagged: list[int] = []
    audit_failures = 0
    audited = 0
    audit_stride = max(1, int(round(1.0 / audit_fraction))) if audit_fraction > 0 else 0

    p_hat = np.full(n, np.nan)
    need_scalar = [i for i in range(n) if not degenerate[i]]

    for i in need_scalar:
        fold_flagged = False
        xs_i = ((x - means[i]) / sds[i])[:, None]
        try:
            problem = LaplaceProblem(xs_i, xs_i, y, g, m)
            problem.seed_modes(full.modes)
            w = np.ones(n)
            w[i] = 0.0
            problem.set_weights(w)
            fit = refit_warm(problem, full.params, hess_factor, gtol=gtol)
            if not fit.converged:
                raise ValueError("fold GLMM did not converge")
            p_hat[i] = float(expit(xs_i[i, 0] * (fit.beta[0] + fit.modes[g[i], 0])))
            if audit_stride and i % audit_stride == 0:
                audited += 1
                cold = fit_glmm_arrays(problem, gtol=gtol)
                if abs(cold.loglik - fit.loglik) > 1e-6 * (1 + abs(cold.loglik)):
                    audit_failures += 1
        except (ValueError, np.linalg.LinAlgError):
            try:
                p_hat[i] = _pooled_slope_prob(
                    np.delete(xs_i[:, 0], i), np.delete(y, i), xs_i[i, 0]
                )
            except Exception:
                p_hat[i] = 0.5
            fold_flagged = True
        if fold_flagged:
            flagged.append(i)

    for i in np.flatnonzero(degenerate):
        p_hat[i] = ones_left[i] / (n - 1)
        flagged.append(int(i))
    flagged = sorted(flagged)
    for i in range(n):
        nll[i] = _clip_nll(float(p_hat[i]), y[i])

    per_participant = {
        pid: float(np.sum(nll[g == gi])) for gi, pid in enumerate(pids)
    }
    return NllScore(
        representation=representation,
        learner=learner or "unknown",
        total_nll=float(np.sum(nll)),
        n_choices=n,
        chance_nll=float(n * np.log(2.0)),
        per_participant=per_participant,
        flagged_folds=tuple(flagged),
        audit_failures=audit_failures,
        audited_folds=audited,
        fold_nlls=tuple(float(v) for v in nll),
    )


def _rollout_one(task, rep, config, representation):
    return sequential_rollout(task, rep, config, representation=representation)


def _score_one_rep(name, rep, logs, tasks, config, task_kind, pids, gtol, pre):
    preds = {
        pid: pre[pid] if pid in pre else _rollout_one(tasks[pid], rep, config, name)
        for pid in pids
    }
    return loo_cv_nll(preds, logs, task_kind, representation=name, gtol=gtol)


def validate_coverage(reps: dict[str, EmbeddingMatrix], tasks: dict[str, TaskSpec]):
    for name, rep in reps.items():
        known = set(rep.stimulus_ids)
        for pid, task in tasks.items():
            for sid in task.stimulus_ids():
                if sid not in known:
                    raise ValidationError(
                        f"representation {name!r} is missing stimulus {sid!r} "
                        f"(task of participant {pid!r})"
                    )


def compare_representations(
    reps: dict[str, EmbeddingMatrix],
    logs: dict[str, ChoiceLog],
    tasks: dict[str, TaskSpec],
    config: LearnerConfig,
    *,
    n_workers: int = 1,
    gtol: float = 1e-6,
    precomputed: dict[str, dict[str, TrajectoryPrediction]] | None = None,
) -> list[NllScore]:
    """Rank representations by total cross-validated NLL (ascending).

    Runs a sequential rollout per participant per representation and scores
    it with loo_cv_nll; rollouts may run in parallel (results are gathered in
    a fixed order so worker count never changes the output). `precomputed`
    supplies already-rolled trajectories per representation (rollouts are
    deterministic functions of task, representation, and config, so reuse is
    pure memoization).
    """
    if set(logs) != set(tasks):
        raise ValidationError("logs and tasks must cover the same participants")
    validate_coverage(reps, tasks)
    kinds = {log.task_kind for log in logs.values()}
    if len(kinds) != 1:
        raise ValidationError(f"mixed task kinds in one comparison: {sorted(kinds)}")
    task_kind = kinds.pop()
    pids = sorted(logs)
    rep_names = sorted(reps)
    precomputed = precomputed or {}
    if n_workers > 1:
        scores = Parallel(n_jobs=n_workers, prefer="processes")(
            delayed(_score_one_rep)(
                name,
                reps[name],
                logs,
                tasks,
                config,
                task_kind,
                pids,
                gtol,
                precomputed.get(name, {}),
            )
            for name in rep_names
        )
    else:
        scores = [
            _score_one_rep(
                name,
                reps[name],
                logs,
                tasks,
                config,
                task_kind,
                pids,
                gtol,
                precomputed.get(name, {}),
            )
            for name in rep_names
        ]
    return sorted(scores, key=lambda s: (s.total_nll, s.representation or ""))


def scores_to_frame(scores: list[NllScore]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "representation": [s.representation for s in scores],
            "learner": [s.learner for s in scores],
            "total_nll": [s.total_nll for s in scores],
            "chance_nll": [s.chance_nll for s in scores],
            "n_choices": [s.n_choices for s in scores],
            "n_flagged_folds": [len(s.flagged_folds) for s in scores],
            "audit_failures": [s.audit_failures for s in scores],
        }
    )


def scores_to_json(scores: list[NllScore]) -> str:
    return json.dumps([s.to_dict() for s in scores], indent=2)


# ---------------------------------------------------------------------------
# Behavioral mixed-effects analyses


def category_behavior_table(
    logs: dict[str, ChoiceLog], tasks: dict[str, TaskSpec]
) -> pd.DataFrame:
    rows = []
    for pid in sorted(logs):
        log, task = logs[pid], tasks[pid]
        for rec in log.records:
            rows.append(
                {
                    "participant": pid,
                    "trial": rec.trial,
                    "condition": task.condition_feature,
                    "correct": int(bool(rec.correct)),
                }
            )
    return pd.DataFrame(rows)


def fit_category_behavior_glmm(
    logs: dict[str, ChoiceLog], tasks: dict[str, TaskSpec]
) -> GlmmFit:
    """Correctness ~ trial with participant random intercepts and random
    slopes for trial and the assigned condition."""
    table = category_behavior_table(logs, tasks)
    spec = GlmmSpec(
        response="correct",
        fixed_effects=("trial",),
        random_effects=("trial", "condition"),
        group="participant",
        standardize_predictors=True,
    )
    return fit_glmm(table, spec)


def reward_behavior_table(
    logs: dict[str, ChoiceLog], tasks: dict[str, TaskSpec]
) -> pd.DataFrame:
    """Right-choice table with standardized mains and their interaction."""
    rows = []
    for pid in sorted(logs):
        log, task = logs[pid], tasks[pid]
        for rec in log.records:
            rewards = task.trials[rec.trial].outcome
            rows.append(
                {
                    "participant": pid,
                    "trial": rec.trial,
                    "condition": task.condition_feature,
                    "reward_diff": rewards[1] - rewards[0],
                    "right_choice": int(rec.chosen_option == 1),
                }
            )
    df = pd.DataFrame(rows)
    for col in ("reward_diff", "trial"):
        sd = df[col].std(ddof=1)
        df[col] = (df[col] - df[col].mean()) / (sd if sd > 0 else 1.0)
    df["reward_diff_x_trial"] = df["reward_diff"] * df["trial"]
    return df


def fit_reward_behavior_glmm(
    logs: dict[str, ChoiceLog], tasks: dict[str, TaskSpec]
) -> GlmmFit:
    """Right choice ~ reward difference * trial with matching participant
    random slopes plus a random slope for the assigned condition."""
    table = reward_behavior_table(logs, tasks)
    spec = GlmmSpec(
        response="right_choice",
        fixed_effects=("reward_diff", "trial", "reward_diff_x_trial"),
        random_effects=("reward_diff", "trial", "reward_diff_x_trial", "condition"),
        group="participant",
        random_intercept=False,
        standardize_predictors=False,  # the table is already standardized
    )
    return fit_glmm(table, spec)
