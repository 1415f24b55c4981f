from pathlib import Path

import numpy as np
import pytest

from treecrf_parser.data import build_vocab, read_conllx
from treecrf_parser.encoder import EncoderConfig, encode_ids
from treecrf_parser.model import ParserModel
from treecrf_parser.trainer import init_params

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(**overrides):
    base = dict(word_dim=4, char_dim=3, pos_dim=2, cnn_window=3, cnn_filters=3, lstm_layers=2,
                lstm_state=3, mlp_dim=4)
    base.update(overrides)
    return EncoderConfig(**base)


def tiny_model(config=None, seed=0, sentences=None):
    sentences = sentences or read_conllx(FIXTURES / "tiny10.conllx")
    vocab = build_vocab(sentences)
    config = config or tiny_config()
    return ParserModel(config, vocab, init_params(config, vocab, np.random.default_rng(seed)))


def relative_error(a, b):
    scale = max(abs(a), abs(b))
    return 0.0 if scale < 1e-10 else abs(a - b) / scale


@pytest.fixture
def tiny10():
    return read_conllx(FIXTURES / "tiny10.conllx")


@pytest.fixture
def model():
    return tiny_model()


@pytest.fixture
def encoded(model, tiny10):
    return [encode_ids(s, model.vocab) for s in tiny10]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
