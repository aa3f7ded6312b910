import numpy as np
import pytest

from taeparse.model import ModelConfig, build_model
from taeparse.tokenizer import train_subword
from taeparse.toydata import generate_toy_dataset


@pytest.fixture(scope="session")
def toy_small():
    """Small corpus + tokenizer shared by model/trainer/decoding tests."""
    split = generate_toy_dataset(seed=0, n_bitext=60, n_mono=150,
                                 n_dev=24, n_test=24)
    texts = [e.source_text for e in split.labeled]
    texts += [e.target_code for e in split.labeled]
    texts += [m.target_code for m in split.monolingual]
    tok = train_subword(texts, vocab_size=140)
    return split, tok


@pytest.fixture(scope="session")
def tiny_config(toy_small):
    _, tok = toy_small
    return ModelConfig(vocab_size=tok.vocab_size, d_model=32, n_heads=2,
                       encoder_layers=1, decoder_layers=2, d_ff=64,
                       max_positions=64)


@pytest.fixture()
def tiny_store(tiny_config):
    return build_model(tiny_config, seed=0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
