import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repscope.embeddings import (
    EmbeddingMatrix,
    ScalingParams,
    load_embedding,
    load_manifest,
    pca_apply,
    pca_fit,
    save_embedding,
    standardize_apply,
    standardize_fit,
)
from repscope.errors import InsufficientDataError, ParseError, ValidationError

from conftest import make_embedding


class TestLoadSave:
    def test_csv_parse(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("id,f1,f2\na,1.0,2.0\nb,3.0,4.0\nc,5.0,6.0\n")
        emb = load_embedding(p, format="csv")
        assert emb.stimulus_ids == ("a", "b", "c")
        assert emb.feature_names == ("f1", "f2")
        assert np.array_equal(emb.values, [[1, 2], [3, 4], [5, 6]])

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("id,f1\na,1.0\nb,NaN\n")
        with pytest.raises(ValidationError, match="non-finite.*'b'.*'f1'"):
            load_embedding(p, format="csv")

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("id,f1\na,1.0\na,2.0\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_embedding(p, format="csv")

    def test_malformed_row_reports_line(self, tmp_path):
        p = tmp_path / "emb.csv"
        p.write_text("id,f1,f2\na,1.0,2.0\nb,3.0\n")
        with pytest.raises(ParseError, match=":3"):
            load_embedding(p, format="csv")

    def test_binary_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        emb = make_embedding(n=10, d=5, seed=7)
        p = tmp_path / "emb.emb"
        save_embedding(emb, p, format="binary")
        back = load_embedding(p, format="binary")
        assert back.stimulus_ids == emb.stimulus_ids
        assert back.feature_names == emb.feature_names
        assert np.array_equal(
            back.values.view(np.uint64), emb.values.view(np.uint64)
        )

    def test_csv_roundtrip_within_tolerance(self, tmp_path):
        emb = make_embedding(n=10, d=5, seed=8)
        p = tmp_path / "emb.csv"
        save_embedding(emb, p, format="csv")
        back = load_embedding(p, format="csv")
        assert np.max(np.abs(back.values - emb.values)) <= 1e-12

    def test_binary_bad_magic(self, tmp_path):
        p = tmp_path / "bad.emb"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ParseError, match="magic"):
            load_embedding(p, format="binary")

    def test_manifest_resolves_relative_paths(self, tmp_path):
        emb = make_embedding(n=4, d=2, seed=1)
        save_embedding(emb, tmp_path / "rep.csv")
        (tmp_path / "manifest.json").write_text('{"rep": "rep.csv"}')
        manifest = load_manifest(tmp_path / "manifest.json")
        assert load_embedding(manifest["rep"]).n_stimuli == 4


class TestStandardize:
    def test_hand_column(self):
        params = standardize_fit(np.array([[1.0], [2.0], [3.0]]))
        assert params.means[0] == 2.0
        assert params.scales[0] == 1.0  # sample sd of 1,2,3

    def test_constant_column(self):
        params = standardize_fit(np.array([[5.0], [5.0], [5.0]]))
        assert params.means[0] == 5.0 and params.scales[0] == 1.0
        out = standardize_apply(params, np.array([[5.0], [5.0]]))
        assert np.all(out == 0.0)

    def test_seeded_moments(self):
        rng = np.random.default_rng(42)
        X = rng.normal(3.0, 2.5, size=(100, 4))
        out = standardize_apply(standardize_fit(X), X)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-12
        assert np.max(np.abs(out.std(axis=0, ddof=1) - 1.0)) < 1e-12

    def test_apply_hand(self):
        params = ScalingParams(means=np.array([2.0]), scales=np.array([1.0]))
        assert standardize_apply(params, np.array([3.0]))[0] == 1.0

    def test_train_mean_row_maps_to_zero(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 3))
        params = standardize_fit(X)
        out = standardize_apply(params, X.mean(axis=0))
        assert np.max(np.abs(out)) < 1e-14

    def test_apply_then_invert(self):
        rng = np.random.default_rng(3)
        X = rng.normal(5.0, 3.0, size=(30, 4))
        params = standardize_fit(X)
        back = standardize_apply(params, X) * params.scales + params.means
        assert np.max(np.abs(back - X)) < 1e-12

    def test_too_few_rows(self):
        with pytest.raises(InsufficientDataError):
            standardize_fit(np.array([[1.0, 2.0]]))

    def test_dim_mismatch(self):
        params = standardize_fit(np.eye(3))
        with pytest.raises(ValidationError):
            standardize_apply(params, np.zeros((2, 4)))

    @given(
        st.integers(min_value=2, max_value=30),
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_fit_apply_property(self, n, d, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(0, 10, size=(n, d))
        X[:, 0] = 7.0  # force one zero-variance column
        out = standardize_apply(standardize_fit(X), X)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-10
        sds = out.std(axis=0, ddof=1)
        assert np.all((np.abs(sds - 1.0) < 1e-10) | (sds == 0.0))


class TestPca:
    def test_rank_one_line(self):
        t = np.linspace(-2, 2, 9)
        X = np.stack([t, 2 * t], axis=1)
        fit = pca_fit(X, 1)
        total_var = X.var(axis=0, ddof=1).sum()
        assert fit.explained_variance[0] == pytest.approx(total_var, rel=1e-12)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((12, 4))
        fit = pca_fit(X, 4)
        Xc = X - X.mean(axis=0)
        back = pca_apply(fit, X) @ fit.component_matrix.T
        assert np.max(np.abs(back - Xc)) < 1e-8

    def test_variances_match_eigh_oracle(self):
        rng = np.random.default_rng(50)
        X = rng.standard_normal((50, 10)) @ np.diag(np.arange(1, 11) ** 0.5)
        fit = pca_fit(X, 3)
        # independent oracle: dense eigendecomposition of the sample covariance
        cov = np.cov(X, rowvar=False, ddof=1)
        eigs = np.sort(np.linalg.eigvalsh(cov))[::-1]
        proj_var = pca_apply(fit, X).var(axis=0, ddof=1)
        assert np.allclose(proj_var, eigs[:3], atol=1e-10)
        assert np.allclose(fit.explained_variance, eigs[:3], atol=1e-10)

    def test_apply_mean_row_is_zero(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((20, 5))
        fit = pca_fit(X, 2)
        assert np.max(np.abs(pca_apply(fit, X.mean(axis=0)))) < 1e-12

    def test_identity_transform(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((20, 3))
        Xc = X - X.mean(axis=0)
        fit = pca_fit(Xc, 3)
        # on centered full-rank data, projecting and rotating back is identity
        back = pca_apply(fit, Xc) @ fit.component_matrix.T
        assert np.max(np.abs(back - Xc)) < 1e-10

    def test_projection_matches_product_oracle(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((15, 6))
        fit = pca_fit(X, 4)
        oracle = (X - fit.column_means) @ fit.component_matrix
        assert np.max(np.abs(pca_apply(fit, X) - oracle)) < 1e-10

    def test_orthonormal_components_and_decreasing_variance(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((40, 7))
        fit = pca_fit(X, 5)
        gram = fit.component_matrix.T @ fit.component_matrix
        assert np.max(np.abs(gram - np.eye(5))) < 1e-8
        assert np.all(np.diff(fit.explained_variance) <= 1e-12)

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((30, 4))
        a = pca_fit(X, 3)
        b = pca_fit(X.copy(), 3)
        assert np.array_equal(a.component_matrix, b.component_matrix)
        for j in range(3):
            col = a.component_matrix[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_k_too_large(self):
        with pytest.raises(ValidationError):
            pca_fit(np.random.default_rng(0).standard_normal((5, 3)), 5)


class TestEmbeddingMatrix:
    def test_row_lookup_and_subset(self, small_embedding):
        rows = small_embedding.rows(["s0003", "s0001"])
        assert np.array_equal(rows[0], small_embedding.values[3])
        assert np.array_equal(rows[1], small_embedding.values[1])

    def test_unknown_feature(self, small_embedding):
        with pytest.raises(KeyError):
            small_embedding.feature_column("nope")

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            EmbeddingMatrix(("a",), ("f1",), np.zeros((2, 1)))
