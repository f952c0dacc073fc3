import numpy as np
import pytest

from repscope.embeddings import EmbeddingMatrix


def make_embedding(n=240, d=8, seed=0, feature_names=None, skew=False):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, d))
    if skew:
        values[:, 0] = rng.exponential(1.0, n)
    ids = tuple(f"s{i:04d}" for i in range(n))
    names = tuple(feature_names or (f"f{j}" for j in range(d)))
    return EmbeddingMatrix(ids, names, values)


@pytest.fixture
def small_embedding():
    return make_embedding(n=240, d=4, seed=11)
