"""Deterministic signal-processing front-end.

Framing, windowing, MFCC and Bark-cepstral analysis, causal delta features
and mu-law companding. Everything here is a pure function: same input frame,
bitwise-same output.

Conventions fixed for the whole project (trainkit must match them bit for bit):
16 kHz audio, 25 ms frames every 10 ms, 512-point FFT of a Hann-windowed
frame, triangular filterbanks built in the warped (mel / Bark) domain,
natural log with a 1e-10 floor, orthonormal DCT-II. MFCC rows are laid out
as [13 coeffs | 13 delta | 13 delta-delta].
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NumericalError, ShapeMismatch

SAMPLE_RATE = 16000
FFT_SIZE = 512
N_SPECTRUM_BINS = FFT_SIZE // 2 + 1  # rfft bins 0..256
N_MEL_BANDS = 26
N_BARK_BANDS = 18
N_MFCC = 13
LOG_FLOOR = 1e-10
MULAW_MU = 255


@dataclass(frozen=True)
class FrameGeometry:
    """25 ms analysis frames taken every 10 ms at 16 kHz."""

    frame_len_ms: float = 25.0
    hop_ms: float = 10.0

    @property
    def frame_len_samples(self) -> int:
        return int(round(self.frame_len_ms * SAMPLE_RATE / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * SAMPLE_RATE / 1000))

    def __post_init__(self):
        if self.hop_samples >= self.frame_len_samples:
            raise ValueError("hop must be smaller than the frame length")


@dataclass
class AudioBuffer:
    """Mono PCM samples in [-1, 1] at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeMismatch("audio must be a 1-D sample sequence")
        if samples.size and not np.all(np.isfinite(samples)):
            raise NumericalError("audio contains non-finite samples")
        self.samples = np.clip(samples, -1.0, 1.0)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def frame_count(n_samples: int, geom: FrameGeometry = FrameGeometry()) -> int:
    """One frame per started hop: ceil(n / hop), at least one frame."""
    if n_samples <= 0:
        raise EmptyInput("cannot frame an empty signal")
    if n_samples < geom.frame_len_samples:
        return 1
    return -(-n_samples // geom.hop_samples)


def frame_signal(audio: AudioBuffer, geom: FrameGeometry = FrameGeometry()) -> np.ndarray:
    """Chop audio into overlapping frames, zero-padding the partial tail.

    Frame k covers samples [k*hop, k*hop + frame_len). Returns an array of
    shape (frame_count, frame_len_samples).
    """
    x = audio.samples
    n = frame_count(len(x), geom)
    frame_len, hop = geom.frame_len_samples, geom.hop_samples
    padded = np.concatenate([x, np.zeros(max(0, (n - 1) * hop + frame_len - len(x)))])
    offsets = np.arange(n) * hop
    idx = offsets[:, None] + np.arange(frame_len)[None, :]
    return padded[idx]


def _check_frame(frame: np.ndarray, geom: FrameGeometry) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (geom.frame_len_samples,):
        raise ShapeMismatch(
            f"expected a frame of {geom.frame_len_samples} samples, got shape {frame.shape}"
        )
    return frame


def mel_scale(freq_hz):
    """HTK mel warping."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def bark_scale(freq_hz):
    """Traunmueller-style Bark warping used for the vocoder cepstrum."""
    f = np.asarray(freq_hz, dtype=np.float64)
    return 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)


def _triangular_bank(n_bands: int, warp) -> np.ndarray:
    """Triangular filters, linear in the warped domain, over rfft bins 0..256."""
    bin_freqs = np.arange(N_SPECTRUM_BINS) * (SAMPLE_RATE / FFT_SIZE)
    z_bins = warp(bin_freqs)
    z_edges = np.linspace(warp(0.0), warp(SAMPLE_RATE / 2.0), n_bands + 2)
    bank = np.zeros((n_bands, N_SPECTRUM_BINS))
    for m in range(n_bands):
        lo, mid, hi = z_edges[m], z_edges[m + 1], z_edges[m + 2]
        rising = (z_bins - lo) / (mid - lo)
        falling = (hi - z_bins) / (hi - mid)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: row k dotted with x gives coefficient k."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] *= np.sqrt(0.5)
    return mat


MEL_BANK = _triangular_bank(N_MEL_BANDS, mel_scale)
BARK_BANK = _triangular_bank(N_BARK_BANDS, bark_scale)
# Peak bin of each Bark band; knot positions for envelope reconstruction.
BARK_CENTER_BINS = np.array([int(np.argmax(row)) for row in BARK_BANK])
_DCT_MEL = _dct_matrix(N_MEL_BANDS)
_DCT_BARK = _dct_matrix(N_BARK_BANDS)
_HANN = np.hanning(FrameGeometry().frame_len_samples)


def _log_band_energies(frame: np.ndarray, bank: np.ndarray, geom: FrameGeometry) -> np.ndarray:
    frame = _check_frame(frame, geom)
    spectrum = np.abs(np.fft.rfft(frame * _HANN, FFT_SIZE))
    return np.log(np.maximum(bank @ spectrum, LOG_FLOOR))


def mel_log_energies(frame, geom: FrameGeometry = FrameGeometry()) -> np.ndarray:
    """Log energies of the 26 mel bands (pre-DCT stage of compute_mfcc)."""
    return _log_band_energies(frame, MEL_BANK, geom)


def bark_log_energies(frame, geom: FrameGeometry = FrameGeometry()) -> np.ndarray:
    """Log energies of the 18 Bark bands (pre-DCT stage of bark_cepstrum)."""
    return _log_band_energies(frame, BARK_BANK, geom)


def compute_mfcc(frame, geom: FrameGeometry = FrameGeometry()) -> np.ndarray:
    """13 MFCCs of one 400-sample frame."""
    return (_DCT_MEL @ mel_log_energies(frame, geom))[:N_MFCC]


def bark_cepstrum(frame, geom: FrameGeometry = FrameGeometry()) -> np.ndarray:
    """18 Bark-scale cepstral coefficients of one 400-sample frame."""
    return _DCT_BARK @ bark_log_energies(frame, geom)


def bark_cepstrum_to_log_energies(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of the Bark DCT: 18 cepstral coefficients -> 18 log energies."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (N_BARK_BANDS,):
        raise ShapeMismatch(f"expected {N_BARK_BANDS} Bark coefficients, got {coeffs.shape}")
    return _DCT_BARK.T @ coeffs


def append_deltas(mfcc_seq: np.ndarray) -> np.ndarray:
    """Stack MFCCs with causal delta and delta-delta features.

    delta[t] = (x[t] - x[t-2]) / 2 where indices before the start replicate
    frame 0, so no future frame is ever read and the feature adds zero
    look-ahead. Input (T, 13), output (T, 39).
    """
    x = np.asarray(mfcc_seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_MFCC:
        raise ShapeMismatch(f"expected (T, {N_MFCC}) MFCC sequence, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInput("empty MFCC sequence")

    def causal_slope(seq):
        lagged = np.vstack([seq[:1], seq[:1], seq])[: len(seq)]
        return (seq - lagged) / 2.0

    d = causal_slope(x)
    dd = causal_slope(d)
    return np.hstack([x, d, dd])


def mulaw_encode(x):
    """mu-law companding to 8-bit codes; code 128 is zero, codes >= 128 are x >= 0."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    y = np.sign(x) * np.log1p(MULAW_MU * np.abs(x)) / np.log(1.0 + MULAW_MU)
    codes = np.clip(np.rint(128.0 + 128.0 * y), 0, 255).astype(np.int64)
    return codes if codes.ndim else int(codes)


def mulaw_decode(code):
    """Inverse mu-law companding: code in [0, 255] -> sample in [-1, 1]."""
    c = np.asarray(code, dtype=np.float64)
    y = (c - 128.0) / 128.0
    x = np.sign(y) * ((1.0 + MULAW_MU) ** np.abs(y) - 1.0) / MULAW_MU
    return x if x.ndim else float(x)


# Scalar fast paths for the per-sample synthesis loop. Same formulas as the
# array versions (log1p and banker's rounding match np.log1p / np.rint).
_INV_LOG_MU1 = 1.0 / math.log(1.0 + MULAW_MU)
MULAW_DECODE_TABLE = mulaw_decode(np.arange(256))


def mulaw_encode_scalar(x: float) -> int:
    if x > 1.0:
        x = 1.0
    elif x < -1.0:
        x = -1.0
    if x >= 0.0:
        y = math.log1p(MULAW_MU * x) * _INV_LOG_MU1
    else:
        y = -math.log1p(-MULAW_MU * x) * _INV_LOG_MU1
    code = round(128.0 + 128.0 * y)
    return 0 if code < 0 else (255 if code > 255 else code)
