import pytest

from dsft.corpus import GeneratorSpec, generate_corpus, record_to_sequence
from dsft.model import ModelConfig, init_params
from dsft.tokenizer import build_vocab


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(GeneratorSpec(count=100), seed=11)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(r.prompt + " " + r.completion for r in small_corpus)


@pytest.fixture(scope="session")
def small_seqs(small_corpus, small_vocab):
    return [record_to_sequence(r, small_vocab) for r in small_corpus]


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(vocab_size=12, layers=2, heads=2, dim=8, ff_dim=16, max_len=8)


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=3)
