"""Representational similarity: linear CKA and anchored difference scores.

CKA is 1 for representations identical up to rotation and scaling, and near
0 for unrelated ones. The difference analysis asks, for each representation,
whether it sits closer to one anchor family or another.
"""

import numpy as np

from repscope import EmbeddingMatrix, linear_cka, pairwise_cka
from repscope.rsa import cka_difference

rng = np.random.default_rng(4)
n, d = 200, 24
ids = tuple(f"s{i:04d}" for i in range(n))


def emb(tag, values):
    return EmbeddingMatrix(ids, tuple(f"{tag}{j}" for j in range(values.shape[1])), values)


base = rng.standard_normal((n, d))
Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
reps = {
    "task": emb("t", base),
    "rotated": emb("r", 3.0 * base @ Q),            # same geometry, new axes
    "noisy": emb("n", base + 1.5 * rng.standard_normal((n, d))),
    "unrelated": emb("u", rng.standard_normal((n, d))),
}

print("== invariance ==")
print(f"CKA(task, rotated+scaled copy) = {linear_cka(base, 3.0 * base @ Q):.6f}")

print("\n== pairwise matrix ==")
names, M = pairwise_cka(reps)
header = " ".join(f"{n:>10}" for n in names)
print(f"{'':>10} {header}")
for name, row in zip(names, M):
    print(f"{name:>10} " + " ".join(f"{v:10.3f}" for v in row))

print("\n== anchored differences ==")
# positive: the representation sits closer to the task embedding than to the
# anchor family; negative: closer to the anchor family
anchor_family = rng.standard_normal((n, d))
blend = 0.6 * anchor_family + 0.8 * rng.standard_normal((n, d))
diffs = cka_difference(
    ("task", reps["task"]),
    {"anchor": emb("a", anchor_family)},
    {"noisy-task": reps["noisy"], "anchor-like": emb("b", blend)},
)
for rep, row in diffs.items():
    for anchor, v in row.items():
        side = "task side" if v > 0 else "anchor side"
        print(f"  {rep:>11} vs {anchor}: {v:+.3f} ({side})")
