"""Synthetic training corpus: 5 phoneme templates, 4 speakers.

Each utterance is a sequence of 150-350 ms segments drawn from five
templates: three "vowels" (impulse train at the speaker's F0 through two
formant resonators), one "fricative" (high-passed noise) and near-silence.
Segments crossfade over ~40 ms, so frames at boundaries are acoustically
ambiguous - that ambiguity is what makes one-frame-shifted classifier
targets genuinely easier to fit. Labels switch at the crossfade midpoint.

Speakers differ in log-F0 mean (110/150/200/270 Hz) and formant scale, so
both F0 mapping and speaker-conditioned feature prediction have signal.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import frontend

SR = 16000
HOP = 160

PHONEME_NAMES = ("sil", "ah", "ee", "oh", "ss")
N_PHONEMES = 5
# (formant1 Hz, formant2 Hz) for the vowels; None marks noise templates
VOWEL_FORMANTS = {1: (700, 1200), 2: (300, 2300), 3: (450, 800)}

SPEAKER_F0 = {"spk0": 110.0, "spk1": 150.0, "spk2": 200.0, "spk3": 270.0}
SPEAKER_FORMANT_SCALE = {"spk0": 1.0, "spk1": 0.94, "spk2": 1.07, "spk3": 1.15}
# glottal pulse shapes: per-speaker voice quality, visible in high-order cepstra
SPEAKER_PULSE = {"spk0": (1.0,), "spk1": (0.7, 0.3), "spk2": (0.55, 0.45),
                 "spk3": (0.45, 0.35, 0.2)}
LOG_F0_JITTER = 0.06  # per-utterance log-F0 spread inside a speaker

CROSSFADE = 640  # 40 ms


@dataclass
class Utterance:
    waveform: np.ndarray
    labels: np.ndarray  # one phoneme id per 10 ms frame
    speaker_id: str
    speaker_index: int
    f0_nominal: float


@dataclass
class Corpus:
    utterances: list
    seed: int

    def by_speaker(self, speaker_id: str):
        return [u for u in self.utterances if u.speaker_id == speaker_id]


def _resonator(x: np.ndarray, freq: float, bandwidth: float) -> np.ndarray:
    r = math.exp(-math.pi * bandwidth / SR)
    c1 = 2.0 * r * math.cos(2.0 * math.pi * freq / SR)
    c2 = -r * r
    y = np.empty_like(x)
    y1 = y2 = 0.0
    for t in range(len(x)):
        y0 = x[t] + c1 * y1 + c2 * y2
        y[t] = y0
        y2, y1 = y1, y0
    return y


def _impulse_train(n: int, f0: float, rng) -> np.ndarray:
    out = np.zeros(n)
    period = SR / f0
    pos = rng.uniform(0, period)
    while pos < n:
        out[int(pos)] = 1.0
        pos += period * (1.0 + rng.normal(0, 0.002))
    return out


def _segment_audio(phoneme: int, n: int, f0: float, formant_scale: float,
                   pulse, rng) -> np.ndarray:
    if phoneme == 0:
        return rng.normal(0.0, 4e-4, n)
    if phoneme == 4:
        noise = rng.normal(0.0, 1.0, n)
        sig = _resonator(noise, 4500.0, 1200.0)
        return 0.12 * sig / (np.max(np.abs(sig)) + 1e-9)
    f1, f2 = VOWEL_FORMANTS[phoneme]
    exc = np.convolve(_impulse_train(n, f0, rng), pulse)[:n]
    sig = _resonator(exc, f1 * formant_scale, 90.0)
    sig = _resonator(sig, f2 * formant_scale, 120.0)
    sig = sig / (np.max(np.abs(sig)) + 1e-9)
    return 0.35 * sig + rng.normal(0.0, 5e-4, n)


def make_utterance(speaker_id: str, rng, n_segments: int = 5,
                   f0_override: float = None) -> Utterance:
    speaker_index = list(SPEAKER_F0).index(speaker_id)
    f0 = f0_override or SPEAKER_F0[speaker_id] * math.exp(rng.normal(0.0, LOG_F0_JITTER))
    scale = SPEAKER_FORMANT_SCALE[speaker_id]
    pulse = np.array(SPEAKER_PULSE[speaker_id])

    segments = []
    prev = -1
    for _ in range(n_segments):
        choices = [p for p in range(N_PHONEMES) if p != prev]
        phoneme = int(rng.choice(choices))
        prev = phoneme
        length = int(rng.uniform(0.15, 0.35) * SR)
        segments.append((phoneme, _segment_audio(phoneme, length, f0, scale, pulse, rng)))

    # crossfaded concatenation; label switches at the crossfade midpoint
    fade_in = np.linspace(0.0, 1.0, CROSSFADE)
    wave = segments[0][1]
    boundaries = [(segments[0][0], 0)]
    for phoneme, seg in segments[1:]:
        overlap = min(CROSSFADE, len(wave), len(seg))
        mixed = wave[-overlap:] * fade_in[::-1][:overlap] + seg[:overlap] * fade_in[:overlap]
        boundary = len(wave) - overlap // 2
        wave = np.concatenate([wave[:-overlap], mixed, seg[overlap:]])
        boundaries.append((phoneme, boundary))

    n_frames = -(-len(wave) // HOP) if len(wave) >= 400 else 1
    labels = np.zeros(n_frames, dtype=np.int64)
    for phoneme, start in boundaries:
        labels[start // HOP :] = phoneme
    return Utterance(np.clip(wave, -1.0, 1.0), labels, speaker_id, speaker_index, f0)


def make_corpus(n_per_speaker: int = 12, seed: int = 0, speakers=None,
                f0_range=None) -> Corpus:
    """f0_range=(lo, hi) draws each utterance's F0 log-uniformly instead of
    from the speaker's range; used to widen the vocoder's pitch coverage."""
    rng = np.random.default_rng(seed)
    utterances = []
    for speaker_id in speakers or list(SPEAKER_F0):
        for _ in range(n_per_speaker):
            f0 = None
            if f0_range is not None:
                f0 = math.exp(rng.uniform(math.log(f0_range[0]), math.log(f0_range[1])))
            utterances.append(make_utterance(speaker_id, rng, f0_override=f0))
    return Corpus(utterances, seed)


def speaker_registry_rows(corpus: Corpus) -> dict:
    """Per-speaker log-F0 statistics measured with the trainkit pitch tracker."""
    stats = {}
    for idx, speaker_id in enumerate(SPEAKER_F0):
        values = []
        for utt in corpus.by_speaker(speaker_id):
            for f0, voiced, _ in frontend.track_pitch(utt.waveform):
                if voiced:
                    values.append(math.log(f0))
        if values:
            mean = float(np.mean(values))
            std = float(max(np.std(values), 1e-3))
        else:
            mean, std = math.log(SPEAKER_F0[speaker_id]), 0.1
        stats[speaker_id] = (idx, mean, std)
    return stats


def format_registry(stats: dict) -> str:
    return "".join(
        f"{sid}\t{idx}\t{mean:.9g}\t{std:.9g}\n" for sid, (idx, mean, std) in stats.items()
    )
