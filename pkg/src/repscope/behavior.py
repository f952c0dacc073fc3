"""Behavioral statistics outside the mixed-effects models.

Per-trial one-sided t-tests against chance, learning-onset detection,
block-smoothed accuracy curves, and the Kendall tau-b correlation used for
the feature-count analysis. Exports are plot-ready tables, no plotting here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import stdtr

from .choicelog import ChoiceLog
from .errors import DegenerateDataError, InsufficientDataError, ValidationError


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    degenerate: bool = False


def t_test_one_sided(values, mu0: float) -> TTestResult:
    """One-sample upper-tail t-test of mean(values) > mu0.

    Zero-variance input degenerates: p = 0.5 at the null mean, 0 above it,
    1 below it (flagged).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise InsufficientDataError("t-test needs at least 2 values")
    n = values.size
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    df = n - 1
    if np.all(values == values[0]):
        v = float(values[0])
        if v == mu0:
            return TTestResult(t=0.0, df=df, p=0.5, degenerate=True)
        if v > mu0:
            return TTestResult(t=np.inf, df=df, p=0.0, degenerate=True)
        return TTestResult(t=-np.inf, df=df, p=1.0, degenerate=True)
    t = (mean - mu0) / (sd / np.sqrt(n))
    p = float(stdtr(df, -t))  # upper tail via symmetry of the t distribution
    return TTestResult(t=float(t), df=df, p=p)


@dataclass(frozen=True)
class AccuracyTable:
    """Rectangular per-participant, per-trial correctness with conditions."""

    participant_ids: tuple[str, ...]
    conditions: tuple[str, ...]
    values: np.ndarray  # (participants, trials) in {0, 1}

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValidationError("accuracy table must be 2-D")
        if values.shape[0] != len(self.participant_ids):
            raise ValidationError("row count must match participant count")
        if len(self.conditions) != len(self.participant_ids):
            raise ValidationError("one condition label per participant")
        if not np.isin(values, (0.0, 1.0)).all():
            raise ValidationError("correctness values must be binary")

    @property
    def n_trials(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def from_choice_logs(logs: dict[str, ChoiceLog]) -> "AccuracyTable":
        pids = sorted(logs)
        lengths = {logs[p].n_trials for p in pids}
        if len(lengths) != 1:
            raise ValidationError("participants have unequal trial counts")
        values = np.array(
            [[1.0 if r.correct else 0.0 for r in logs[p].records] for p in pids]
        )
        conditions = tuple(logs[p].condition_feature for p in pids)
        return AccuracyTable(tuple(pids), conditions, values)


def per_trial_tests(table: AccuracyTable, chance: float) -> list[TTestResult]:
    return [
        t_test_one_sided(table.values[:, t], chance) for t in range(table.n_trials)
    ]


def learning_onset(
    table: AccuracyTable, chance: float = 0.5, alpha_level: float = 0.05
) -> int | None:
    """Smallest trial index whose own per-trial test is significant."""
    for t, res in enumerate(per_trial_tests(table, chance)):
        if res.p < alpha_level:
            return t
    return None


def kendall_tau_b(x, y) -> tuple[float, float]:
    """Tau-b with tie correction; p from the tie-adjusted normal approximation.

    Concordant/discordant pairs are counted directly (the analysis compares a
    few dozen representations, so O(n^2) is immaterial) and assembled by the
    textbook formula, making results exactly reproducible by any pair-count
    reimplementation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be equal-length vectors")
    if x.size < 2:
        raise InsufficientDataError("tau-b needs at least 2 points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateDataError("tau-b is undefined for an all-tied vector")
    n = x.size
    iu = np.triu_indices(n, 1)
    s = np.sign(x[:, None] - x[None, :])[iu] * np.sign(y[:, None] - y[None, :])[iu]
    P = int((s > 0).sum())
    Q = int((s < 0).sum())
    n0 = n * (n - 1) // 2

    def tie_counts(v):
        _, counts = np.unique(v, return_counts=True)
        return counts[counts > 1].astype(np.int64)

    tx = tie_counts(x)
    ty = tie_counts(y)
    n1 = int((tx * (tx - 1) // 2).sum())
    n2 = int((ty * (ty - 1) // 2).sum())
    tau = (P - Q) / np.sqrt((n0 - n1) * (n0 - n2))
    v0 = n * (n - 1) * (2 * n + 5)
    vt = int((tx * (tx - 1) * (2 * tx + 5)).sum())
    vu = int((ty * (ty - 1) * (2 * ty + 5)).sum())
    v1 = int((tx * (tx - 1)).sum()) * int((ty * (ty - 1)).sum()) / (2 * n * (n - 1))
    v2 = (
        int((tx * (tx - 1) * (tx - 2)).sum())
        * int((ty * (ty - 1) * (ty - 2)).sum())
        / (9 * n * (n - 1) * (n - 2))
    )
    var = (v0 - vt - vu) / 18 + v1 + v2
    z = (P - Q) / np.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return float(tau), p


def smooth_curve(values, window: int) -> np.ndarray:
    """Non-overlapping block means; a trailing partial block averages over
    its actual length."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValidationError("window must be >= 1")
    if window > values.size:
        raise ValidationError("window exceeds curve length")
    out = []
    for start in range(0, values.size, window):
        out.append(values[start : start + window].mean())
    return np.array(out)


def accuracy_summary(table: AccuracyTable, chance: float = 0.5) -> pd.DataFrame:
    """Plot-ready per-trial summary: mean accuracy, normal-approximation 95%
    band, and the one-sided test against chance."""
    tests = per_trial_tests(table, chance)
    means = table.values.mean(axis=0)
    sems = table.values.std(axis=0, ddof=1) / np.sqrt(table.values.shape[0])
    return pd.DataFrame(
        {
            "trial": np.arange(table.n_trials),
            "mean_accuracy": means,
            "ci_low": means - 1.96 * sems,
            "ci_high": means + 1.96 * sems,
            "t": [r.t for r in tests],
            "p": [r.p for r in tests],
        }
    )
