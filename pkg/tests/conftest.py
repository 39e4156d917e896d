import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streamvox import dsp, nn, pitch, wavio  # noqa: E402


def speech_signal(n, seed=0, f0=140.0):
    """Harmonic complex with mild noise; a stand-in for voiced speech."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000
    sig = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 6)) / k for k in range(1, 9))
    return (0.3 * sig / np.max(np.abs(sig)) + rng.normal(0, 0.01, n)).clip(-1, 1)


@pytest.fixture(scope="session")
def toy_bundle():
    return nn.random_bundle(5, 4, seed=0)


@pytest.fixture(scope="session")
def toy_bundle_file(toy_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "toy.svx"
    nn.save_bundle_file(toy_bundle, path)
    return path


@pytest.fixture(scope="session")
def registry_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("speakers") / "speakers.tsv"
    pitch.save_registry(
        {
            "alice": pitch.SpeakerProfile("alice", 0, math.log(210.0), 0.18),
            "bob": pitch.SpeakerProfile("bob", 1, math.log(120.0), 0.22),
        },
        path,
    )
    return path


@pytest.fixture(scope="session")
def speech_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("audio") / "speech.wav"
    wavio.write_wav(path, dsp.AudioBuffer(speech_signal(16000, seed=7)))
    return path
