"""Trainkit's own analysis front-end.

Independent implementation of the feature definitions the engine uses: 25 ms
frames every 10 ms at 16 kHz, Hann window, 512-point FFT magnitude, warped
triangular filterbanks (26 mel bands for MFCCs, 18 Bark bands for the vocoder
cepstrum), natural log floored at 1e-10, orthonormal DCT-II, strictly causal
deltas, 128-scale mu-law, autocorrelation pitch with a 640-sample causal
context, and the order-16 LPC chain. Training features MUST match the engine
bit-for-bit at the format boundary; the golden-vector tests pin this to 1e-5.
"""

import numpy as np

SR = 16000
FRAME = 400
HOP = 160
NFFT = 512
N_BINS = NFFT // 2 + 1
N_MEL = 26
N_BARK = 18
LOG_FLOOR = 1e-10

PITCH_CONTEXT = 640
MIN_LAG = 40
MAX_LAG = 256
CORR_THRESHOLD = 0.3
RMS_GATE = 1e-4

LPC_ORDER = 16
ENV_BINS = 256


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def _bark(f):
    f = np.asarray(f, dtype=float)
    return 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)


def _bank(n_bands, warp):
    z = warp(np.arange(N_BINS) * SR / NFFT)
    edges = np.linspace(warp(0.0), warp(SR / 2.0), n_bands + 2)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (z[None, :] - lo) / (mid - lo)
    falling = (hi - z[None, :]) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def _dct(n):
    k, m = np.arange(n)[:, None], np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * m + 1) / (2 * n))
    mat[0] *= np.sqrt(0.5)
    return mat


_WINDOW = np.hanning(FRAME)
_MEL_BANK = _bank(N_MEL, _mel)
_BARK_BANK = _bank(N_BARK, _bark)
_DCT_MEL = _dct(N_MEL)
_DCT_BARK = _dct(N_BARK)
_BARK_CENTERS = np.argmax(_BARK_BANK, axis=1)
_LAG_WINDOW = np.exp(-0.5 * (2.0 * np.pi * 60.0 * np.arange(LPC_ORDER + 1) / SR) ** 2)


def frame_signal(x: np.ndarray) -> np.ndarray:
    """(ceil(n/hop), 400) overlapping frames, zero-padded tail."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty signal")
    n = -(-len(x) // HOP) if len(x) >= FRAME else 1
    pad = max(0, (n - 1) * HOP + FRAME - len(x))
    padded = np.concatenate([x, np.zeros(pad)])
    idx = np.arange(n)[:, None] * HOP + np.arange(FRAME)[None, :]
    return padded[idx]


def _log_energies(frames: np.ndarray, bank: np.ndarray) -> np.ndarray:
    spectra = np.abs(np.fft.rfft(frames * _WINDOW, NFFT, axis=-1))
    return np.log(np.maximum(spectra @ bank.T, LOG_FLOOR))


def mfcc(frames: np.ndarray) -> np.ndarray:
    """13 MFCCs per frame; frames shaped (T, 400)."""
    return _log_energies(np.atleast_2d(frames), _MEL_BANK) @ _DCT_MEL.T[:, :13]


def bark_cepstrum(frames: np.ndarray) -> np.ndarray:
    return _log_energies(np.atleast_2d(frames), _BARK_BANK) @ _DCT_BARK.T


def append_deltas(coeffs: np.ndarray) -> np.ndarray:
    """Causal delta/delta-delta stack: (T, 13) -> (T, 39)."""
    def slope(seq):
        lagged = np.vstack([seq[:1], seq[:1], seq])[: len(seq)]
        return (seq - lagged) / 2.0

    d = slope(coeffs)
    return np.hstack([coeffs, d, slope(d)])


def mulaw_encode(x):
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    y = np.sign(x) * np.log1p(255.0 * np.abs(x)) / np.log(256.0)
    return np.clip(np.rint(128.0 + 128.0 * y), 0, 255).astype(np.int64)


def mulaw_decode(code):
    y = (np.asarray(code, dtype=np.float64) - 128.0) / 128.0
    return np.sign(y) * (256.0 ** np.abs(y) - 1.0) / 255.0


def encode_f0(f0_hz: float) -> float:
    return float(np.log(f0_hz / 100.0)) if f0_hz > 0 else 0.0


def detect_pitch(context: np.ndarray):
    """(f0_hz, voiced, corr) from the last 640 samples; no future input."""
    context = np.asarray(context, dtype=np.float64)
    if len(context) < PITCH_CONTEXT:
        context = np.concatenate([np.zeros(PITCH_CONTEXT - len(context)), context])
    window = context[MAX_LAG:]
    win_len = PITCH_CONTEXT - MAX_LAG
    energy = window @ window
    frame_rms = np.sqrt(np.mean(context[-FRAME:] ** 2))
    if energy <= 0 or frame_rms < RMS_GATE:
        return 0.0, False, 0.0
    lags = np.arange(MIN_LAG, MAX_LAG + 1)
    starts = MAX_LAG - lags
    lagged = context[starts[:, None] + np.arange(win_len)[None, :]]
    cross = lagged @ window
    sq = np.concatenate([[0.0], np.cumsum(context * context)])
    denom = np.sqrt(energy * (sq[starts + win_len] - sq[starts]))
    corr = np.where(denom > 0, cross / np.maximum(denom, 1e-30), 0.0)

    best = int(np.argmax(corr))
    peak = float(corr[best])
    if peak < CORR_THRESHOLD:
        return 0.0, False, max(peak, 0.0)
    idx = best
    best_lag = lags[best]
    for div in range(2, best_lag // MIN_LAG + 1):
        approx = best_lag / div
        if approx < MIN_LAG:
            break
        lo = max(int(approx) - 2 - MIN_LAG, 0)
        hi = min(int(approx) + 3 - MIN_LAG, len(lags))
        if lo >= hi:
            continue
        cand = lo + int(np.argmax(corr[lo:hi]))
        if corr[cand] >= 0.90 * peak:
            idx = cand
    lag = float(lags[idx])
    if 0 < idx < len(lags) - 1:
        l, m, r = corr[idx - 1], corr[idx], corr[idx + 1]
        curv = l - 2 * m + r
        if curv < 0:
            lag += 0.5 * (l - r) / curv
    f0 = min(max(SR / lag, SR / MAX_LAG), SR / MIN_LAG)
    return f0, True, min(max(peak, 0.0), 1.0)


def track_pitch(x: np.ndarray):
    """Per-frame (f0, voiced, corr) with the engine's streaming context rule."""
    frames = frame_signal(x)
    context = np.zeros(PITCH_CONTEXT)
    first = frames[0][: FRAME - HOP]
    context[-len(first):] = first
    out = []
    for frame in frames:
        context = np.concatenate([context[HOP:], frame[-HOP:]])
        out.append(detect_pitch(context))
    return out


def utterance_features(x: np.ndarray):
    """(mfcc39, vocoder20, pitch_track) for one waveform."""
    frames = frame_signal(x)
    mfcc39 = append_deltas(mfcc(frames))
    track = track_pitch(x)
    voc = np.empty((len(frames), 20))
    voc[:, :18] = bark_cepstrum(frames)
    voc[:, 18] = [encode_f0(f0) for f0, _, _ in track]
    voc[:, 19] = [corr for _, _, corr in track]
    return mfcc39, voc, track


# --- LPC chain (teacher forcing needs the engine's exact predictor) -----------


def envelope_from_bark(coeffs: np.ndarray) -> np.ndarray:
    log_energies = _DCT_BARK.T @ np.asarray(coeffs, dtype=np.float64)
    return np.exp(np.interp(np.arange(ENV_BINS), _BARK_CENTERS, log_energies))


def lpc_from_bark(coeffs: np.ndarray) -> np.ndarray:
    """Bark cepstrum -> 16 prediction coefficients (conditioned, stable)."""
    power = envelope_from_bark(coeffs)
    half = np.concatenate([power, power[-1:]])
    r = np.fft.irfft(half, NFFT)[: LPC_ORDER + 1] * _LAG_WINDOW
    r[0] *= 1.0 + 1e-6
    a = np.zeros(LPC_ORDER)
    energy = r[0]
    for i in range(1, LPC_ORDER + 1):
        acc = r[i] - a[: i - 1] @ r[i - 1 : 0 : -1]
        k = acc / energy
        if i > 1:
            a[: i - 1] -= k * a[i - 2 :: -1]
        a[i - 1] = k
        energy *= 1.0 - k * k
    return a


def teacher_forcing_codes(x: np.ndarray, voc: np.ndarray):
    """Per-sample mu-law codes for vocoder training.

    Returns (prev_output, prev_excitation, predicted, target) int arrays of
    length n_frames*160. Predictions run the frame's LPC over the clean
    waveform history, exactly as the engine does over its own output.
    """
    n_frames = len(voc)
    total = n_frames * HOP
    x = np.concatenate([np.asarray(x, dtype=np.float64), np.zeros(max(0, total - len(x)))])
    x = np.clip(x[:total], -1.0, 1.0)
    pred = np.empty(total)
    history = np.zeros(LPC_ORDER)
    for k in range(n_frames):
        a = lpc_from_bark(voc[k, :18])
        for i in range(HOP):
            t = k * HOP + i
            pred[t] = a @ history
            history[1:] = history[:-1]
            history[0] = x[t]
    excitation = np.clip(x - pred, -1.0, 1.0)
    exc_codes = mulaw_encode(excitation)
    out_codes = mulaw_encode(x)
    prev_out = np.concatenate([[128], out_codes[:-1]])
    prev_exc = np.concatenate([[128], exc_codes[:-1]])
    return prev_out, prev_exc, mulaw_encode(pred), exc_codes
