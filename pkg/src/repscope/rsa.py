"""Representational similarity via linear centered kernel alignment.

CKA(A, B) = ||B'A||_F^2 / (||A'A||_F ||B'B||_F) on column-mean-centered
matrices: 1 means identical up to orthogonal transform and isotropic scaling,
0 means maximally dissimilar.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import DegenerateDataError, ValidationError

_DENOM_FLOOR = 1e-30


def _center_columns(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValidationError("representations must be 2-D matrices")
    return M - M.mean(axis=0)


def linear_cka(A, B, method: str = "auto") -> float:
    """Linear CKA between two row-aligned representation matrices.

    method picks the evaluation path: "direct" forms the feature-space
    products, "gram" the n x n Gram matrices (preferred when features
    outnumber rows), "auto" switches on shape. Both paths agree to 1e-10.
    """
    A = _center_columns(A)
    B = _center_columns(B)
    if A.shape[0] != B.shape[0]:
        raise ValidationError(
            f"row count mismatch: {A.shape[0]} vs {B.shape[0]} (stimuli must align)"
        )
    if A.shape[0] < 2:
        raise ValidationError("CKA needs at least 2 rows")
    if method == "auto":
        method = "gram" if max(A.shape[1], B.shape[1]) > A.shape[0] else "direct"
    if method == "direct":
        num = float(np.sum((B.T @ A) ** 2))
        den_a = float(np.sqrt(np.sum((A.T @ A) ** 2)))
        den_b = float(np.sqrt(np.sum((B.T @ B) ** 2)))
    elif method == "gram":
        Ka = A @ A.T
        Kb = B @ B.T
        num = float(np.sum(Ka * Kb))
        den_a = float(np.sqrt(np.sum(Ka * Ka)))
        den_b = float(np.sqrt(np.sum(Kb * Kb)))
    else:
        raise ValueError(f"unknown method {method!r}")
    if den_a < _DENOM_FLOOR or den_b < _DENOM_FLOOR:
        raise DegenerateDataError(
            "representation is zero after centering; CKA is undefined"
        )
    return num / (den_a * den_b)


def _aligned_values(reps: dict[str, EmbeddingMatrix]) -> dict[str, np.ndarray]:
    names = list(reps)
    first = reps[names[0]]
    for name in names[1:]:
        if reps[name].stimulus_ids != first.stimulus_ids:
            raise ValidationError(
                f"stimulus ids of {name!r} are not aligned with {names[0]!r}"
            )
    return {name: reps[name].values for name in names}


def pairwise_cka(reps: dict[str, EmbeddingMatrix]) -> tuple[list[str], np.ndarray]:
    """Full symmetric CKA matrix over named, row-aligned representations."""
    values = _aligned_values(reps)
    names = list(values)
    k = len(names)
    out = np.empty((k, k))
    for i in range(k):
        out[i, i] = linear_cka(values[names[i]], values[names[i]])
        for j in range(i + 1, k):
            c = linear_cka(values[names[i]], values[names[j]])
            out[i, j] = c
            out[j, i] = c
    return names, out


def cka_difference(
    anchor_a: tuple[str, EmbeddingMatrix],
    anchor_set_b: dict[str, EmbeddingMatrix],
    others: dict[str, EmbeddingMatrix],
) -> dict[str, dict[str, float]]:
    """CKA(anchor_a, R) - CKA(b, R) for every other representation R and
    every b in the anchor set; positive means R sits closer to anchor_a."""
    a_name, a_mat = anchor_a
    all_reps = {a_name: a_mat, **anchor_set_b, **others}
    _aligned_values(all_reps)
    out: dict[str, dict[str, float]] = {}
    for r_name, r in others.items():
        row = {}
        base = linear_cka(a_mat.values, r.values)
        for b_name, b in anchor_set_b.items():
            row[b_name] = base - linear_cka(b.values, r.values)
        out[r_name] = row
    return out


def cka_matrix_to_csv(names: list[str], matrix: np.ndarray, path) -> None:
    lines = ["name," + ",".join(names)]
    for name, row in zip(names, matrix):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def differences_to_json(diffs: dict[str, dict[str, float]]) -> str:
    return json.dumps(diffs, indent=2)


def differences_to_csv(diffs: dict[str, dict[str, float]], path) -> None:
    lines = ["representation,anchor,difference"]
    for r_name, row in diffs.items():
        for b_name, v in row.items():
            lines.append(f"{r_name},{b_name},{repr(float(v))}")
    Path(path).write_text("\n".join(lines) + "\n")
