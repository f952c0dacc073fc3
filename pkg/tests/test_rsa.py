import numpy as np
import pytest

from repscope.embeddings import EmbeddingMatrix
from repscope.errors import DegenerateDataError, ValidationError
from repscope.rsa import (
    cka_difference,
    cka_matrix_to_csv,
    linear_cka,
    pairwise_cka,
)


def naive_cka(A, B):
    """Independent elementwise evaluation of the CKA formula."""
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    bta = B.T @ A
    num = sum(bta[i, j] ** 2 for i in range(bta.shape[0]) for j in range(bta.shape[1]))
    ata = A.T @ A
    btb = B.T @ B
    den_a = np.sqrt(sum(ata[i, j] ** 2 for i in range(ata.shape[0]) for j in range(ata.shape[1])))
    den_b = np.sqrt(sum(btb[i, j] ** 2 for i in range(btb.shape[0]) for j in range(btb.shape[1])))
    return num / (den_a * den_b)


def named(mats):
    n = next(iter(mats.values())).shape[0]
    ids = tuple(f"s{i}" for i in range(n))
    return {
        k: EmbeddingMatrix(ids, tuple(f"{k}{j}" for j in range(v.shape[1])), v)
        for k, v in mats.items()
    }


class TestLinearCka:
    def test_self_similarity(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((12, 5))
        assert linear_cka(A, A) == pytest.approx(1.0, abs=1e-12)

    def test_invariance_class(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((15, 6))
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        assert linear_cka(A, -2.7 * A @ Q) == pytest.approx(1.0, abs=1e-10)

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((10, 3))
        B = rng.standard_normal((10, 4))
        assert linear_cka(A, B) == pytest.approx(naive_cka(A, B), abs=1e-12)

    def test_symmetry_bounds_and_gram_agreement(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(4, 20))
            A = rng.standard_normal((n, int(rng.integers(2, 12))))
            B = rng.standard_normal((n, int(rng.integers(2, 12))))
            ab = linear_cka(A, B)
            assert abs(ab - linear_cka(B, A)) < 1e-12
            assert -1e-10 <= ab <= 1.0 + 1e-10
            assert abs(
                linear_cka(A, B, method="direct") - linear_cka(A, B, method="gram")
            ) < 1e-10

    def test_gram_path_used_for_wide_matrices(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((8, 100))
        B = rng.standard_normal((8, 90))
        assert linear_cka(A, B) == pytest.approx(naive_cka(A, B), abs=1e-10)

    def test_zero_matrix_rejected(self):
        with pytest.raises(DegenerateDataError):
            linear_cka(np.ones((5, 3)), np.random.default_rng(0).standard_normal((5, 3)))

    def test_row_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            linear_cka(np.zeros((4, 2)), np.zeros((5, 2)))


class TestPairwise:
    def test_identical_reps_full_ones(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((10, 4))
        reps = named({"a": A, "b": A.copy()})
        names, M = pairwise_cka(reps)
        assert M[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert M[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_matches_individual_calls(self):
        rng = np.random.default_rng(7)
        mats = {k: rng.standard_normal((12, 3 + i)) for i, k in enumerate("abc")}
        reps = named(mats)
        names, M = pairwise_cka(reps)
        for i, ni in enumerate(names):
            for j, nj in enumerate(names):
                assert M[i, j] == pytest.approx(
                    linear_cka(mats[ni], mats[nj]), abs=1e-12
                )
        assert np.array_equal(M, M.T)

    def test_misaligned_ids_rejected(self):
        rng = np.random.default_rng(8)
        a = EmbeddingMatrix(("x", "y"), ("f",), rng.standard_normal((2, 1)))
        b = EmbeddingMatrix(("y", "x"), ("f",), rng.standard_normal((2, 1)))
        with pytest.raises(ValidationError):
            pairwise_cka({"a": a, "b": b})

    def test_csv_export(self, tmp_path):
        rng = np.random.default_rng(9)
        reps = named({"a": rng.standard_normal((8, 3)), "b": rng.standard_normal((8, 2))})
        names, M = pairwise_cka(reps)
        out = tmp_path / "cka.csv"
        cka_matrix_to_csv(names, M, out)
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "name,a,b"
        assert float(lines[1].split(",")[2]) == pytest.approx(M[0, 1], abs=1e-15)


class TestDifference:
    def test_self_anchor_positive(self):
        rng = np.random.default_rng(10)
        A = rng.standard_normal((10, 4))
        B = rng.standard_normal((10, 4))
        reps = named({"a": A, "b": B})
        diffs = cka_difference(("a", reps["a"]), {"b": reps["b"]}, {"r": reps["a"]})
        expected = 1.0 - linear_cka(B, A)
        assert diffs["r"]["b"] == pytest.approx(expected, abs=1e-12)
        assert diffs["r"]["b"] > 0

    def test_anchor_b_itself_non_positive(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((10, 4))
        B = rng.standard_normal((10, 5))
        reps = named({"a": A, "b": B})
        diffs = cka_difference(("a", reps["a"]), {"b": reps["b"]}, {"r": reps["b"]})
        assert diffs["r"]["b"] == pytest.approx(linear_cka(A, B) - 1.0, abs=1e-12)
        assert diffs["r"]["b"] <= 0

    def test_matches_pairwise_lookups(self):
        rng = np.random.default_rng(12)
        mats = {k: rng.standard_normal((14, 4)) for k in "abc"}
        reps = named(mats)
        diffs = cka_difference(("a", reps["a"]), {"b": reps["b"]}, {"c": reps["c"]})
        oracle = linear_cka(mats["a"], mats["c"]) - linear_cka(mats["b"], mats["c"])
        assert diffs["c"]["b"] == pytest.approx(oracle, abs=1e-12)
