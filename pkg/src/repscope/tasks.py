"""Category- and reward-learning task construction.

Tasks are linear functions of one embedding feature: a median split for
category membership, an affine [0, 100] rescaling for rewards. Stimuli are
drawn without replacement via binned sampling so skewed feature distributions
still produce loadings spread over the whole range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import DegenerateDataError, ValidationError

RNG_ALGORITHM = "pcg64"

CATEGORY_TRIALS = 120
REWARD_TRIALS = 60
DEFAULT_BINS = 5


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit's named RNG (recorded in serialized tasks)."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """n independent child seeds via the splittable seed tree."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class StimulusDraw:
    stimulus_id: str
    loading: float
    image_ref: str | None = None

    def __post_init__(self):
        if not np.isfinite(self.loading):
            raise ValidationError(f"non-finite loading for {self.stimulus_id!r}")


@dataclass(frozen=True)
class Trial:
    """One task trial: presented stimuli plus the ground-truth outcome.

    Category trials hold one stimulus and an int label in {0, 1}; reward
    trials hold two stimuli (left, right) and one reward per stimulus.
    """

    index: int
    stimuli: tuple[StimulusDraw, ...]
    outcome: int | tuple[float, ...]


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    condition_feature: str
    seed: int
    trials: tuple[Trial, ...]
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if self.kind not in ("category", "reward"):
            raise ValidationError(f"unknown task kind {self.kind!r}")
        per_trial = 1 if self.kind == "category" else 2
        n_expected = CATEGORY_TRIALS if self.kind == "category" else REWARD_TRIALS
        if len(self.trials) != n_expected:
            raise ValidationError(
                f"{self.kind} task must have {n_expected} trials, got {len(self.trials)}"
            )
        seen: set[str] = set()
        for t in self.trials:
            if len(t.stimuli) != per_trial:
                raise ValidationError(
                    f"trial {t.index}: expected {per_trial} stimuli, got {len(t.stimuli)}"
                )
            for s in t.stimuli:
                if s.stimulus_id in seen:
                    raise ValidationError(
                        f"stimulus {s.stimulus_id!r} repeats within the task"
                    )
                seen.add(s.stimulus_id)

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def stimulus_ids(self) -> list[str]:
        """All presented stimulus ids, in presentation order."""
        return [s.stimulus_id for t in self.trials for s in t.stimuli]


def bin_loadings(loadings: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bin index per loading over [min, max]; max maps to the last bin."""
    loadings = np.asarray(loadings, dtype=np.float64)
    if loadings.size == 0:
        raise ValidationError("empty loadings")
    if not np.isfinite(loadings).all():
        raise ValidationError("loadings must be finite")
    if n_bins < 1:
        raise ValidationError(f"n_bins must be >= 1, got {n_bins}")
    lo, hi = loadings.min(), loadings.max()
    if hi == lo:
        raise DegenerateDataError("all loadings identical; bins are undefined")
    idx = np.floor((loadings - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.minimum(idx, n_bins - 1)


def sample_stimuli(
    embedding: EmbeddingMatrix,
    feature: str,
    n: int,
    rng_seed: int,
    n_bins: int = DEFAULT_BINS,
) -> list[StimulusDraw]:
    """Draw n unique stimuli: pick a non-exhausted bin uniformly, then a
    remaining stimulus uniformly within it."""
    loadings = embedding.feature_column(feature)
    if n > embedding.n_stimuli:
        raise ValidationError(
            f"requested {n} stimuli but embedding has {embedding.n_stimuli}"
        )
    bins = bin_loadings(loadings, n_bins)
    pools = [list(np.flatnonzero(bins == b)) for b in range(n_bins)]
    rng = make_rng(rng_seed)
    draws: list[StimulusDraw] = []
    for _ in range(n):
        open_bins = [b for b in range(n_bins) if pools[b]]
        b = open_bins[rng.integers(len(open_bins))]
        j = pools[b].pop(rng.integers(len(pools[b])))
        sid = embedding.stimulus_ids[j]
        draws.append(StimulusDraw(sid, float(loadings[j]), image_ref=sid))
    return draws


def median_split_labels(loadings) -> np.ndarray:
    """1 where loading is strictly greater than the sample median, else 0."""
    loadings = np.asarray(loadings, dtype=np.float64)
    return (loadings > np.median(loadings)).astype(np.int64)


def rescale_rewards(loadings) -> np.ndarray:
    """Affine map of loadings onto [0, 100]."""
    loadings = np.asarray(loadings, dtype=np.float64)
    lo, hi = loadings.min(), loadings.max()
    if hi == lo:
        raise DegenerateDataError("zero loading range; rewards are undefined")
    # ratio first so the extreme loadings land exactly on 0 and 100
    return ((loadings - lo) / (hi - lo)) * 100.0


def make_category_task(
    draws: list[StimulusDraw], feature: str, seed: int
) -> TaskSpec:
    """120 one-stimulus trials labeled by a median split, in draw order."""
    if len(draws) != CATEGORY_TRIALS:
        raise ValidationError(f"category task needs {CATEGORY_TRIALS} draws")
    labels = median_split_labels([d.loading for d in draws])
    trials = tuple(
        Trial(index=i, stimuli=(d,), outcome=int(labels[i]))
        for i, d in enumerate(draws)
    )
    return TaskSpec("category", feature, seed, trials)


def make_reward_task(draws: list[StimulusDraw], feature: str, seed: int) -> TaskSpec:
    """60 two-stimulus trials: rewards rescaled to [0, 100], seeded random
    perfect matching into pairs, uniform random left/right placement."""
    if len(draws) != 2 * REWARD_TRIALS:
        raise ValidationError(f"reward task needs {2 * REWARD_TRIALS} draws")
    rewards = rescale_rewards([d.loading for d in draws])
    rng = make_rng(seed)
    order = rng.permutation(len(draws))
    trials = []
    for i in range(REWARD_TRIALS):
        a, b = order[2 * i], order[2 * i + 1]
        if rng.integers(2) == 1:
            a, b = b, a
        trials.append(
            Trial(
                index=i,
                stimuli=(draws[a], draws[b]),
                outcome=(float(rewards[a]), float(rewards[b])),
            )
        )
    return TaskSpec("reward", feature, seed, tuple(trials))


def generate_task(
    embedding: EmbeddingMatrix,
    feature: str,
    kind: str,
    seed: int,
    n_bins: int = DEFAULT_BINS,
) -> TaskSpec:
    """Sample stimuli and build a complete task in one step."""
    if kind == "category":
        draws = sample_stimuli(embedding, feature, CATEGORY_TRIALS, seed, n_bins)
        return make_category_task(draws, feature, seed)
    if kind == "reward":
        draws = sample_stimuli(embedding, feature, 2 * REWARD_TRIALS, seed, n_bins)
        return make_reward_task(draws, feature, seed)
    raise ValidationError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# Serialization (canonical: regeneration with the same seed is byte-identical)


def task_to_json(task: TaskSpec) -> str:
    doc = {
        "kind": task.kind,
        "condition_feature": task.condition_feature,
        "seed": task.seed,
        "rng_algorithm": task.rng_algorithm,
        "trials": [
            {
                "index": t.index,
                "stimuli": [
                    {
                        "stimulus_id": s.stimulus_id,
                        "loading": s.loading,
                        "image_ref": s.image_ref,
                    }
                    for s in t.stimuli
                ],
                "outcome": t.outcome if isinstance(t.outcome, int) else list(t.outcome),
            }
            for t in task.trials
        ],
    }
    return json.dumps(doc, indent=2)


def task_from_json(text: str) -> TaskSpec:
    doc = json.loads(text)
    trials = tuple(
        Trial(
            index=t["index"],
            stimuli=tuple(
                StimulusDraw(s["stimulus_id"], s["loading"], s.get("image_ref"))
                for s in t["stimuli"]
            ),
            outcome=t["outcome"] if isinstance(t["outcome"], int) else tuple(t["outcome"]),
        )
        for t in doc["trials"]
    )
    return TaskSpec(
        kind=doc["kind"],
        condition_feature=doc["condition_feature"],
        seed=doc["seed"],
        trials=trials,
        rng_algorithm=doc.get("rng_algorithm", RNG_ALGORITHM),
    )
