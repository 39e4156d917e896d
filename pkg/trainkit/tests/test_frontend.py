"""Front-end feature parity against the engine-generated golden vectors."""

import csv
import wave

import numpy as np
import pytest

from trainkit import frontend

from conftest import GOLDEN


def load_golden_features():
    with open(GOLDEN / "golden_features.csv") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    return header, rows


def load_golden_audio():
    with wave.open(str(GOLDEN / "golden_in.wav"), "rb") as w:
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


class TestGoldenParity:
    def test_mfcc_and_deltas(self):
        audio = load_golden_audio()
        _, golden = load_golden_features()
        mfcc39, _, _ = frontend.utterance_features(audio)
        assert mfcc39.shape == (len(golden), 39)
        np.testing.assert_allclose(mfcc39, golden[:, :39], atol=1e-5)

    def test_bark_cepstra(self):
        audio = load_golden_audio()
        _, golden = load_golden_features()
        _, voc, _ = frontend.utterance_features(audio)
        np.testing.assert_allclose(voc[:, :18], golden[:, 39:57], atol=1e-5)

    def test_pitch_track(self):
        audio = load_golden_audio()
        _, golden = load_golden_features()
        _, voc, _ = frontend.utterance_features(audio)
        np.testing.assert_allclose(voc[:, 18], golden[:, 57], atol=1e-5)
        np.testing.assert_allclose(voc[:, 19], golden[:, 58], atol=1e-5)

    def test_mulaw_table(self):
        with open(GOLDEN / "golden_mulaw.csv") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        table = [r for r in rows if r["kind"] == "table"]
        codes = np.array([int(r["code"]) for r in table])
        decoded = np.array([float(r["decoded"]) for r in table])
        np.testing.assert_allclose(frontend.mulaw_decode(codes), decoded, atol=1e-12)
        for r in rows:
            if r["kind"] == "encode":
                assert int(frontend.mulaw_encode(float(r["value"]))) == int(r["code"])


class TestFrontendShapes:
    def test_frame_count(self):
        assert len(frontend.frame_signal(np.zeros(16000))) == 100
        assert len(frontend.frame_signal(np.zeros(100))) == 1

    def test_deltas_causal(self):
        rng = np.random.default_rng(0)
        seq = rng.normal(size=(12, 13))
        base = frontend.append_deltas(seq)
        seq2 = seq.copy()
        seq2[8:] += 1.0
        assert np.array_equal(frontend.append_deltas(seq2)[:8], base[:8])

    def test_lpc_stable(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            coeffs = rng.normal(0, 1.0, 18)
            a = frontend.lpc_from_bark(coeffs)
            roots = np.roots(np.concatenate([[1.0], -a]))
            assert np.all(np.abs(roots) < 1.0)

    def test_teacher_codes_lengths(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-0.5, 0.5, 3000)
        _, voc, _ = frontend.utterance_features(x)
        po, pe, pr, tg = frontend.teacher_forcing_codes(x, voc)
        assert len(po) == len(pe) == len(pr) == len(tg) == len(voc) * 160
        assert po[0] == 128 and pe[0] == 128
        for arr in (po, pe, pr, tg):
            assert arr.min() >= 0 and arr.max() <= 255
