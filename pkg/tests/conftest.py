import numpy as np
import pytest

from dxprivacy.embeddings import SPECIAL_TOKENS, EmbeddingTable
from dxprivacy.synthetic import line_table


@pytest.fixture
def tri_table():
    return EmbeddingTable(["a", "b", "c"], np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


@pytest.fixture
def two_point():
    """Regular tokens at 0 and 1 on the real line."""
    return line_table([0.0, 1.0])


@pytest.fixture
def word_table():
    words = ["the", "nerve", "emotions", "emotion", "##x", "##al", "##ly", "un", "##happy", "happy", ".", ","]
    toks = list(SPECIAL_TOKENS) + words
    rng = np.random.default_rng(3)
    return EmbeddingTable(toks, rng.normal(size=(len(toks), 4)))
