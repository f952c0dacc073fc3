"""Representation matrices: loading, validation, standardization, and PCA.

An embedding is a dense stimuli x features matrix with string identifiers on
both axes. The same type serves as the task-generating embedding and as a
candidate representation in the behavioral comparison pipeline.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError

_MAGIC = b"RSEMB\x01"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Validated stimuli x features matrix with row/column identifiers."""

    stimulus_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "stimulus_ids", tuple(self.stimulus_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {values.shape}")
        n, d = values.shape
        if n != len(self.stimulus_ids):
            raise ValidationError(
                f"{len(self.stimulus_ids)} stimulus ids but {n} rows"
            )
        if d != len(self.feature_names):
            raise ValidationError(
                f"{len(self.feature_names)} feature names but {d} columns"
            )
        if len(set(self.stimulus_ids)) != len(self.stimulus_ids):
            seen, dup = set(), None
            for s in self.stimulus_ids:
                if s in seen:
                    dup = s
                    break
                seen.add(s)
            raise ValidationError(f"duplicate stimulus id {dup!r}")
        bad = ~np.isfinite(values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-finite value at stimulus {self.stimulus_ids[i]!r}, "
                f"feature {self.feature_names[j]!r}"
            )

    @property
    def n_stimuli(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def row_index(self, stimulus_id: str) -> int:
        idx = self._index().get(stimulus_id)
        if idx is None:
            raise KeyError(f"unknown stimulus id {stimulus_id!r}")
        return idx

    def _index(self) -> dict[str, int]:
        cache = getattr(self, "_row_cache", None)
        if cache is None:
            cache = {s: i for i, s in enumerate(self.stimulus_ids)}
            object.__setattr__(self, "_row_cache", cache)
        return cache

    def rows(self, stimulus_ids) -> np.ndarray:
        """Feature rows for the given ids, in the given order."""
        idx = [self.row_index(s) for s in stimulus_ids]
        return self.values[idx]

    def feature_column(self, feature: str) -> np.ndarray:
        try:
            j = self.feature_names.index(feature)
        except ValueError:
            raise KeyError(f"unknown feature {feature!r}") from None
        return self.values[:, j]


@dataclass(frozen=True)
class ScalingParams:
    """Per-feature centering/scaling parameters (sample-sd convention)."""

    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        scales = np.asarray(self.scales, dtype=np.float64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        if means.shape != scales.shape or means.ndim != 1:
            raise ValidationError("means and scales must be equal-length vectors")
        if (scales < 0).any():
            raise ValidationError("scales must be non-negative")


def standardize_fit(X: np.ndarray) -> ScalingParams:
    """Column means and sample (n-1) standard deviations.

    Zero-variance columns get scale 1 so the transformed column is all zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InsufficientDataError(
            f"standardize_fit needs at least 2 rows, got {X.shape[0]}"
        )
    means = X.mean(axis=0)
    scales = X.std(axis=0, ddof=1)
    scales = np.where(scales == 0.0, 1.0, scales)
    return ScalingParams(means=means, scales=scales)


def standardize_apply(params: ScalingParams, X: np.ndarray) -> np.ndarray:
    """(x - mean) / scale per column."""
    X = np.asarray(X, dtype=np.float64)
    one_d = X.ndim == 1
    if one_d:
        X = X[None, :]
    if X.shape[1] != params.means.shape[0]:
        raise ValidationError(
            f"column count {X.shape[1]} does not match scaling params "
            f"({params.means.shape[0]})"
        )
    out = (X - params.means) / params.scales
    return out[0] if one_d else out


@dataclass(frozen=True)
class PcaTransform:
    """Top-k principal directions of column-centered fitting data."""

    component_matrix: np.ndarray  # features x k, orthonormal columns
    column_means: np.ndarray
    k: int
    explained_variance: np.ndarray = field(default=None, compare=False)


def pca_fit(X: np.ndarray, k: int) -> PcaTransform:
    """Fit a k-component PCA (covariance form, centering only).

    Components are ordered by decreasing singular value; each component's
    largest-magnitude entry is made positive so results are deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if k < 1 or k > min(n - 1, d):
        raise ValidationError(
            f"k={k} out of range for {n}x{d} data (max {min(n - 1, d)})"
        )
    means = X.mean(axis=0)
    Xc = X - means
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k].T.copy()
    flips = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(k)])
    flips[flips == 0] = 1.0
    comps *= flips
    variances = svals[:k] ** 2 / (n - 1)
    return PcaTransform(
        component_matrix=comps, column_means=means, k=k, explained_variance=variances
    )


def pca_apply(t: PcaTransform, X: np.ndarray) -> np.ndarray:
    """(X - column_means) @ component_matrix."""
    X = np.asarray(X, dtype=np.float64)
    one_d = X.ndim == 1
    if one_d:
        X = X[None, :]
    if X.shape[1] != t.component_matrix.shape[0]:
        raise ValidationError(
            f"column count {X.shape[1]} does not match transform "
            f"({t.component_matrix.shape[0]})"
        )
    out = (X - t.column_means) @ t.component_matrix
    return out[0] if one_d else out


# ---------------------------------------------------------------------------
# File formats


def load_embedding(path, format: str = "auto") -> EmbeddingMatrix:
    """Load an embedding from a CSV or binary file.

    format="auto" picks binary for the .emb suffix and CSV otherwise.
    """
    path = Path(path)
    fmt = format
    if fmt == "auto":
        fmt = "binary" if path.suffix == ".emb" else "csv"
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def save_embedding(emb: EmbeddingMatrix, path, format: str = "auto") -> None:
    path = Path(path)
    fmt = format
    if fmt == "auto":
        fmt = "binary" if path.suffix == ".emb" else "csv"
    if fmt == "csv":
        _save_csv(emb, path)
    elif fmt == "binary":
        _save_binary(emb, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def _load_csv(path: Path) -> EmbeddingMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path, line=1) from None
        if len(header) < 2:
            raise ParseError("header must be 'id,<feature...>'", path=path, line=1)
        feature_names = header[1:]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}",
                    path=path,
                    line=lineno,
                )
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"bad numeric value: {exc}", path=path, line=lineno)
    if not rows:
        raise ParseError("no data rows", path=path, line=2)
    return EmbeddingMatrix(tuple(ids), tuple(feature_names), np.array(rows))


def _save_csv(emb: EmbeddingMatrix, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *emb.feature_names])
        for sid, row in zip(emb.stimulus_ids, emb.values):
            writer.writerow([sid, *(repr(float(v)) for v in row)])


def _save_binary(emb: EmbeddingMatrix, path: Path) -> None:
    n, d = emb.values.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", n, d))
        for name in (*emb.stimulus_ids, *emb.feature_names):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(emb.values, dtype="<f8").tobytes())


def _load_binary(path: Path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ParseError("bad magic bytes", path=path)
    off = len(_MAGIC)
    try:
        n, d = struct.unpack_from("<II", data, off)
        off += 8
        names = []
        for _ in range(n + d):
            (length,) = struct.unpack_from("<I", data, off)
            off += 4
            names.append(data[off : off + length].decode("utf-8"))
            off += length
        values = np.frombuffer(data, dtype="<f8", count=n * d, offset=off)
        if off + n * d * 8 != len(data):
            raise ParseError(f"trailing or missing bytes at offset {off}", path=path)
    except struct.error as exc:
        raise ParseError(f"truncated file: {exc}", path=path) from None
    return EmbeddingMatrix(
        tuple(names[:n]), tuple(names[n:]), values.reshape(n, d).copy()
    )


def load_manifest(path) -> dict[str, Path]:
    """Representation manifest: JSON object mapping name -> embedding path.

    Relative paths resolve against the manifest's own directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc}", path=path, line=exc.lineno)
    if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
        raise ParseError("manifest must map names to path strings", path=path)
    base = path.parent
    return {name: (base / p if not Path(p).is_absolute() else Path(p)) for name, p in raw.items()}


def load_representations(manifest: dict[str, Path]) -> dict[str, EmbeddingMatrix]:
    return {name: load_embedding(p) for name, p in manifest.items()}
