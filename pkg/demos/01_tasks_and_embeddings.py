"""Generating category and reward tasks from an embedding.

Tasks are linear functions of one embedding feature: the category boundary
is a median split over the sampled stimuli's loadings, and rewards are the
loadings rescaled onto [0, 100]. Stimuli are drawn through equal-width bins
so skewed features still cover their whole range.
"""

import numpy as np

from repscope import EmbeddingMatrix, bin_loadings, generate_task
from repscope.tasks import task_to_json

rng = np.random.default_rng(0)
n_stimuli, n_features = 400, 8
values = rng.standard_normal((n_stimuli, n_features))
values[:, 0] = rng.exponential(1.0, n_stimuli)  # a skewed feature, like real loadings
embedding = EmbeddingMatrix(
    tuple(f"obj-{i:04d}" for i in range(n_stimuli)),
    tuple(f"dim{j}" for j in range(n_features)),
    values,
)

print("== binned sampling ==")
bins = bin_loadings(embedding.feature_column("dim0"), 5)
print("stimuli per equal-width bin:", np.bincount(bins, minlength=5))

print("\n== category task ==")
task = generate_task(embedding, "dim0", "category", seed=42)
labels = np.array([t.outcome for t in task.trials])
loadings = np.array([t.stimuli[0].loading for t in task.trials])
print(f"{task.n_trials} trials, class balance {labels.sum()}/{len(labels) - labels.sum()}")
print(f"median split: class-1 loadings all above {loadings[labels == 0].max():.3f}")

print("\n== reward task ==")
rtask = generate_task(embedding, "dim0", "reward", seed=42)
rewards = np.array([t.outcome for t in rtask.trials])
print(f"{rtask.n_trials} trials of 2 options; rewards span "
      f"[{rewards.min():.1f}, {rewards.max():.1f}]")

print("\n== reproducibility ==")
again = generate_task(embedding, "dim0", "reward", seed=42)
print("same seed regenerates byte-identical JSON:",
      task_to_json(rtask) == task_to_json(again))
