import pytest

from drda.bpe import train_bpe
from drda.synth import synthetic_sentences

TOY_LINES = ["ab", "ab", "abc"]


@pytest.fixture(scope="session")
def toy_model():
    """Hand-traced model: merges (▁,a), (▁a,b), (▁ab,c); 4 specials + 4 base symbols."""
    return train_bpe([TOY_LINES], 3)


@pytest.fixture(scope="session")
def toy_full(toy_model):
    return toy_model.max_size


@pytest.fixture(scope="session")
def toy_trunc(toy_model):
    return toy_model.max_size - 1


@pytest.fixture(scope="session")
def corpus_10k():
    return synthetic_sentences(10_000, seed=0)


@pytest.fixture(scope="session")
def bpe_10k(corpus_10k):
    return train_bpe([corpus_10k], 4000)
