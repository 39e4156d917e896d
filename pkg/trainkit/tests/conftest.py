import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN = Path(__file__).parent / "golden"

from trainkit import corpus, training  # noqa: E402


@pytest.fixture(scope="session")
def small_corpus():
    return corpus.make_corpus(6, seed=0)


@pytest.fixture(scope="session")
def heldout_corpus():
    return corpus.make_corpus(2, seed=9000)


@pytest.fixture(scope="session")
def prepared_small(small_corpus):
    return training.prepare(small_corpus)


@pytest.fixture(scope="session")
def prepared_heldout(heldout_corpus):
    return training.prepare(heldout_corpus)


@pytest.fixture(scope="session")
def trained_stack(tmp_path_factory):
    """Train the full toy stack once per session at test-sized schedules."""
    train_corpus = corpus.make_corpus(20, seed=0)
    heldout = corpus.make_corpus(4, seed=9000)
    prepared = training.prepare(train_corpus)
    prepared_heldout = training.prepare(heldout)
    config = training.TrainConfig(vocoder_steps=700)
    acoustic, acoustic_history = training.train_acoustic(prepared, config)
    conversion, conversion_history = training.train_conversion(prepared, acoustic, config)
    aug = corpus.make_corpus(10, seed=77, f0_range=(95, 320))
    prepared_vocoder = prepared + training.prepare(aug)
    frame_net, sample_net, vocoder_history = training.train_vocoder(prepared_vocoder, config)
    return {
        "config": config,
        "corpus": train_corpus,
        "prepared": prepared,
        "prepared_heldout": prepared_heldout,
        "acoustic": acoustic,
        "acoustic_history": acoustic_history,
        "conversion": conversion,
        "conversion_history": conversion_history,
        "frame_net": frame_net,
        "sample_net": sample_net,
        "vocoder_history": vocoder_history,
        "dir": tmp_path_factory.mktemp("stack"),
    }
