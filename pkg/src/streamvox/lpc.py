"""Linear-prediction machinery for the vocoder.

A frame's 18 Bark cepstral coefficients are turned back into a spectral
envelope, the envelope into autocorrelation lags, and the lags into a
16th-order all-pole predictor via the Levinson-Durbin recursion. The
per-sample predictor then supplies the "linear predicted sample" that the
sample-rate network's excitation is added to.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import DegenerateSpectrum, NumericalError, ShapeMismatch

LPC_ORDER = 16
N_ENVELOPE_BINS = 256
# Gaussian lag window (60 Hz bandwidth) plus a relative noise floor keep the
# autocorrelation positive definite, so |k_i| < 1 and the filter stays stable.
NOISE_FLOOR = 1e-6
LAG_WINDOW = np.exp(-0.5 * (2.0 * np.pi * 60.0 * np.arange(LPC_ORDER + 1) / dsp.SAMPLE_RATE) ** 2)


@dataclass
class LpcCoefficients:
    """Prediction coefficients a_1..a_16 of x_hat[t] = sum a_k x[t-k]."""

    a: np.ndarray
    source_frame_index: int = -1

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.shape != (LPC_ORDER,):
            raise ShapeMismatch(f"expected {LPC_ORDER} LPC coefficients, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite LPC coefficients")
        self.a = a


@dataclass
class PredictorState:
    """Last 16 synthesized samples, most recent first. Single-owner per stream."""

    history: np.ndarray = field(default_factory=lambda: np.zeros(LPC_ORDER))

    def push(self, sample: float) -> None:
        self.history[1:] = self.history[:-1]
        self.history[0] = sample

    def reset(self) -> None:
        self.history[:] = 0.0


def envelope_from_bark(coeffs: np.ndarray) -> np.ndarray:
    """Rebuild a 256-bin power envelope from 18 Bark cepstral coefficients.

    The cepstrum is inverted to 18 log band energies; those are pinned at the
    peak bin of each Bark band and linearly interpolated across bins in the
    log domain (flat beyond the outermost bands), then exponentiated.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not np.all(np.isfinite(coeffs)):
        raise NumericalError("non-finite Bark cepstrum")
    log_energies = dsp.bark_cepstrum_to_log_energies(coeffs)
    bins = np.arange(N_ENVELOPE_BINS)
    log_env = np.interp(bins, dsp.BARK_CENTER_BINS, log_energies)
    return np.exp(log_env)


def autocorr_from_envelope(power: np.ndarray, order: int = LPC_ORDER) -> np.ndarray:
    """Autocorrelation lags 0..order of the symmetrized power spectrum.

    The returned lags are already conditioned: a 1e-6 relative noise floor on
    lag 0 and the Gaussian lag window on the rest.
    """
    power = np.asarray(power, dtype=np.float64)
    if power.shape != (N_ENVELOPE_BINS,):
        raise ShapeMismatch(f"expected {N_ENVELOPE_BINS} envelope bins, got {power.shape}")
    if not np.all(np.isfinite(power)):
        raise NumericalError("non-finite power spectrum")
    if np.any(power < 0) or np.max(power) <= 0:
        raise DegenerateSpectrum("power spectrum must be non-negative with some energy")
    half_spectrum = np.concatenate([power, power[-1:]])  # Nyquist bin copies bin 255
    r = np.fft.irfft(half_spectrum, dsp.FFT_SIZE)[: order + 1]
    r = r * LAG_WINDOW[: order + 1]
    r[0] *= 1.0 + NOISE_FLOOR
    return r


def levinson_durbin(r: np.ndarray, order: int = LPC_ORDER):
    """Levinson-Durbin recursion. Returns (coefficients a_1..a_order, residual_energy)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] < order + 1:
        raise ShapeMismatch(f"need lags 0..{order}, got {r.shape[0]}")
    if r[0] <= 0:
        raise DegenerateSpectrum("autocorrelation lag 0 must be positive")
    a = np.zeros(order)
    energy = r[0]
    for i in range(1, order + 1):
        acc = r[i] - a[: i - 1] @ r[i - 1 : 0 : -1]
        k = acc / energy
        if not np.isfinite(k) or abs(k) >= 1.0:
            raise NumericalError(f"reflection coefficient {i} out of range: {k}")
        if i > 1:
            a[: i - 1] -= k * a[i - 2 :: -1]
        a[i - 1] = k
        energy *= 1.0 - k * k
    return a, float(energy)


def coeffs_for_frame(bark_coeffs: np.ndarray, frame_index: int = -1) -> LpcCoefficients:
    """Full per-frame chain: Bark cepstrum -> envelope -> autocorrelation -> LPC."""
    envelope = envelope_from_bark(bark_coeffs)
    r = autocorr_from_envelope(envelope)
    a, _ = levinson_durbin(r)
    return LpcCoefficients(a, frame_index)


def predict(state: PredictorState, coeffs: LpcCoefficients) -> float:
    """Linear prediction from the last 16 outputs; does not mutate state."""
    return float(coeffs.a @ state.history)
