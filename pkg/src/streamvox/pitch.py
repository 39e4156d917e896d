"""Frame-synchronous F0 estimation, running F0 statistics and F0 mapping.

The detector is a zero-look-ahead normalized autocorrelation search over a
640-sample context that ends at the current frame's last sample, so it adds
no latency on top of the analysis framing. Voicing requires both a strong
autocorrelation peak and a minimum frame energy.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import InvalidProfile

PITCH_CONTEXT = 640
MIN_LAG = 40   # 400 Hz
MAX_LAG = 256  # 62.5 Hz
CORR_THRESHOLD = 0.3
RMS_GATE = 1e-4
STD_FLOOR = 1e-3
F0_REFERENCE_HZ = 100.0  # network F0 input is ln(f0/100), 0 when unvoiced


@dataclass
class PitchFrame:
    f0_hz: float
    voiced: bool
    pitch_corr: float

    def __post_init__(self):
        if not self.voiced:
            self.f0_hz = 0.0
        self.pitch_corr = float(min(max(self.pitch_corr, 0.0), 1.0))


@dataclass
class SpeakerProfile:
    """Speaker identity plus running log-F0 statistics."""

    speaker_id: str
    one_hot_index: int
    log_f0_mean: float = 0.0
    log_f0_std: float = 0.0
    n_observations: int = 0
    _m2: float = 0.0

    @property
    def valid(self) -> bool:
        return self.log_f0_std > 0 and math.isfinite(self.log_f0_mean)


def update_f0_stats(profile: SpeakerProfile, f0_hz: float) -> SpeakerProfile:
    """Fold one voiced-frame F0 into the profile's running ln(F0) moments."""
    if f0_hz is None or f0_hz <= 0:
        return profile
    value = math.log(f0_hz)
    if profile.n_observations == 0:
        profile.log_f0_mean = 0.0
        profile._m2 = 0.0
    profile.n_observations += 1
    delta = value - profile.log_f0_mean
    profile.log_f0_mean += delta / profile.n_observations
    profile._m2 += delta * (value - profile.log_f0_mean)
    profile.log_f0_std = max(math.sqrt(profile._m2 / profile.n_observations), STD_FLOOR)
    return profile


def map_f0(f0_src_hz: float, src: SpeakerProfile, tgt: SpeakerProfile) -> float:
    """Log-domain moment matching of source F0 onto the target speaker's range."""
    if f0_src_hz <= 0:
        return 0.0
    if not src.valid:
        raise InvalidProfile(f"source profile {src.speaker_id!r} has no valid F0 statistics")
    if not tgt.valid:
        raise InvalidProfile(f"target profile {tgt.speaker_id!r} has no valid F0 statistics")
    z = (math.log(f0_src_hz) - src.log_f0_mean) / src.log_f0_std
    return math.exp(tgt.log_f0_mean + z * tgt.log_f0_std)


def encode_f0(f0_hz: float) -> float:
    """Network input encoding: ln(f0/100) for voiced frames, 0 for unvoiced."""
    return math.log(f0_hz / F0_REFERENCE_HZ) if f0_hz > 0 else 0.0


def detect_pitch(context: np.ndarray, geom: dsp.FrameGeometry = dsp.FrameGeometry()) -> PitchFrame:
    """Estimate F0 from the last 640 samples (all in the past, no look-ahead)."""
    context = np.asarray(context, dtype=np.float64)
    if len(context) < PITCH_CONTEXT:
        context = np.concatenate([np.zeros(PITCH_CONTEXT - len(context)), context])
    elif len(context) > PITCH_CONTEXT:
        context = context[-PITCH_CONTEXT:]

    window = context[MAX_LAG:]
    win_len = PITCH_CONTEXT - MAX_LAG
    energy_win = window @ window
    frame_rms = math.sqrt(float(context[-geom.frame_len_samples :] @
                                context[-geom.frame_len_samples :]) / geom.frame_len_samples)
    if energy_win <= 0 or frame_rms < RMS_GATE:
        return PitchFrame(0.0, False, 0.0)

    lags = np.arange(MIN_LAG, MAX_LAG + 1)
    starts = MAX_LAG - lags
    lagged = context[starts[:, None] + np.arange(win_len)[None, :]]
    cross = lagged @ window
    sq = np.concatenate([[0.0], np.cumsum(context * context)])
    lag_energy = sq[starts + win_len] - sq[starts]
    denom = np.sqrt(energy_win * lag_energy)
    corr = np.where(denom > 0, cross / np.maximum(denom, 1e-30), 0.0)

    best_idx = int(np.argmax(corr))
    best_corr = float(corr[best_idx])
    if best_corr < CORR_THRESHOLD:
        return PitchFrame(0.0, False, best_corr)

    # the global peak may sit on a period multiple; prefer the shortest
    # sub-multiple whose own peak is nearly as strong
    idx = best_idx
    best_lag = lags[best_idx]
    for div in range(2, best_lag // MIN_LAG + 1):
        approx = best_lag / div
        if approx < MIN_LAG:
            break
        lo = max(int(approx) - 2 - MIN_LAG, 0)
        hi = min(int(approx) + 3 - MIN_LAG, len(lags))
        if lo >= hi:
            continue
        cand = lo + int(np.argmax(corr[lo:hi]))
        if corr[cand] >= 0.90 * best_corr:
            idx = cand

    lag = float(lags[idx])
    if 0 < idx < len(lags) - 1:
        left, mid, right = corr[idx - 1], corr[idx], corr[idx + 1]
        denom2 = left - 2 * mid + right
        if denom2 < 0:
            lag += 0.5 * (left - right) / denom2
    f0 = dsp.SAMPLE_RATE / lag
    f0 = min(max(f0, dsp.SAMPLE_RATE / MAX_LAG), dsp.SAMPLE_RATE / MIN_LAG)
    return PitchFrame(f0, True, best_corr)


class PitchTracker:
    """Streaming per-frame pitch detection; context built from past samples only."""

    def __init__(self, geom: dsp.FrameGeometry = dsp.FrameGeometry()):
        self.geom = geom
        self._context = np.zeros(PITCH_CONTEXT)

    def push_frame(self, frame: np.ndarray) -> PitchFrame:
        """Consume the next hop of samples ending at the current frame's end.

        The caller hands the full 400-sample frame; only the newest hop extends
        the context (earlier samples were pushed with earlier frames).
        """
        hop = self.geom.hop_samples
        new = np.asarray(frame, dtype=np.float64)[-hop:]
        self._context = np.concatenate([self._context[hop:], new])
        return detect_pitch(self._context, self.geom)

    def prime(self, samples: np.ndarray) -> None:
        """Seed the context with the pre-hop part of the very first frame."""
        samples = np.asarray(samples, dtype=np.float64)
        keep = samples[-PITCH_CONTEXT:]
        self._context = np.concatenate([np.zeros(PITCH_CONTEXT - len(keep)), keep])


# --- speaker registry ----------------------------------------------------------

def parse_registry(text: str) -> dict[str, SpeakerProfile]:
    """Parse the tab-separated speaker registry."""
    profiles: dict[str, SpeakerProfile] = {}
    indices = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise InvalidProfile(f"registry line {line_no}: expected 4 tab-separated fields")
        speaker_id, idx_s, mean_s, std_s = parts
        try:
            idx, mean, std = int(idx_s), float(mean_s), float(std_s)
        except ValueError:
            raise InvalidProfile(f"registry line {line_no}: malformed number") from None
        if std <= 0:
            raise InvalidProfile(f"registry line {line_no}: log_f0_std must be > 0")
        if idx < 0 or idx in indices:
            raise InvalidProfile(f"registry line {line_no}: one_hot_index {idx} reused or negative")
        if speaker_id in profiles:
            raise InvalidProfile(f"registry line {line_no}: duplicate speaker {speaker_id!r}")
        indices.add(idx)
        profiles[speaker_id] = SpeakerProfile(speaker_id, idx, mean, std)
    return profiles


def load_registry(path) -> dict[str, SpeakerProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_registry(fh.read())


def format_registry(profiles) -> str:
    rows = sorted(profiles.values(), key=lambda p: p.one_hot_index)
    return "".join(
        f"{p.speaker_id}\t{p.one_hot_index}\t{p.log_f0_mean:.9g}\t{p.log_f0_std:.9g}\n"
        for p in rows
    )


def save_registry(profiles, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_registry(profiles))
