"""Three-stage streaming voice conversion and its latency accounting.

Signal path per 10 ms frame: MFCC+deltas -> acoustic net -> PPG; PPG + mapped
F0 + speaker one-hot -> conversion net -> 20-D vocoder features; features ->
frame-rate net (width-3 conv x2, look-ahead 2 frames) -> conditioning; then
160 sample-rate steps predict mu-law excitation codes which are added to the
LPC prediction.

Look-ahead bookkeeping. In "lookahead" mode the acoustic and conversion nets
each release their output one frame late (the nets were trained against
one-frame-shifted targets), the frame-rate convolutions see two future
frames, and the emitted waveform is additionally delayed by half the window
overlap (120 samples). With that alignment the worst-case dependency horizon
of output sample t is exactly t + 57.5 ms; in "streaming" mode (no shift in
the first two stages) it is exactly t + 37.5 ms.

A ConversionSession owns all per-stream state; ModelBundle objects are
immutable and shared. Chunked and one-shot processing are the same code,
so outputs match bitwise for any chunking.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import dsp, lpc, nn, pitch
from .errors import EmptyInput, InvalidProfile, ShapeMismatch, StreamvoxError

MODES = ("lookahead", "streaming")
VOICING_THRESHOLD = 0.3
TEMPERATURE_VOICED = 1.0
TEMPERATURE_UNVOICED = 0.7
# Output alignment delay: half the analysis window overlap.
OUTPUT_SHIFT = (dsp.FrameGeometry().frame_len_samples - dsp.FrameGeometry().hop_samples) // 2


@dataclass(frozen=True)
class LatencyBudget:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    acoustic_lookahead_frames: int = 1
    conversion_lookahead_frames: int = 1
    vocoder_lookahead_frames: int = 2


def budget_for_mode(mode: str) -> LatencyBudget:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    shift = 1 if mode == "lookahead" else 0
    return LatencyBudget(acoustic_lookahead_frames=shift, conversion_lookahead_frames=shift)


def latency_of(budget: LatencyBudget) -> float:
    """Total algorithmic latency in milliseconds."""
    lookahead_frames = (
        budget.acoustic_lookahead_frames
        + budget.conversion_lookahead_frames
        + budget.vocoder_lookahead_frames
    )
    return (budget.frame_len_ms + budget.hop_ms) / 2.0 + lookahead_frames * budget.hop_ms


@dataclass
class ConversionRequest:
    audio: dsp.AudioBuffer
    src_profile: pitch.SpeakerProfile
    tgt_profile: pitch.SpeakerProfile
    bundle: nn.ModelBundle
    mode: str = "lookahead"
    seed: int = 0


# --- per-stage forward passes ---------------------------------------------------


def _acoustic_step(layers, state: nn.RecurrentState, x39: np.ndarray):
    """One acoustic-model step; returns (ppg, pre-softmax input of the classifier)."""
    h = nn.dense_forward(x39, layers[0])
    h = nn.dense_forward(h, layers[1])
    h, state.states[2] = nn.lstm_step(h, state.states[2], layers[2])
    h, state.states[3] = nn.lstm_step(h, state.states[3], layers[3])
    return h


def _conversion_step(layers, state: nn.RecurrentState, u: np.ndarray):
    h = nn.dense_forward(u, layers[0])
    h, state.states[1] = nn.lstm_step(h, state.states[1], layers[1])
    h, state.states[2] = nn.lstm_step(h, state.states[2], layers[2])
    h = nn.dense_forward(h, layers[3])
    return nn.dense_forward(h, layers[4])


class _ShiftRegister:
    """One-frame-shift bookkeeping for nets trained on delayed targets.

    The net's output at step s is the prediction for frame s-1, so the first
    output (a prediction for frame "-1") is dropped and every later output
    passes straight through. At end of stream the caller replays the final
    input once to obtain the last frame's prediction. Pass-through when
    disabled (streaming mode).
    """

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._dropped_first = False

    def push(self, value):
        if self.enabled and not self._dropped_first:
            self._dropped_first = True
            return []
        return [value]


class StageStream:
    """Recurrent state plus shift bookkeeping for one chunked stage."""

    def __init__(self, layers, lookahead: bool):
        self.rstate = nn.RecurrentState(layers)
        self.shift = _ShiftRegister(lookahead)
        self.last_input = None


def acoustic_forward(mfcc_seq, bundle: nn.ModelBundle, stream: StageStream = None,
                     lookahead: bool = False, flush: bool = True) -> np.ndarray:
    """PPG sequence for 39-D feature frames (classifier head bypassed).

    In lookahead mode the PPG for frame t is the net's output at step t+1;
    flushing replays the final frame so every input frame gets a PPG. Pass a
    StageStream (and flush=False) to process a long input chunk by chunk.
    """
    layers = bundle[nn.ACOUSTIC]
    mfcc_seq = np.asarray(mfcc_seq, dtype=np.float32)
    if mfcc_seq.ndim != 2 or mfcc_seq.shape[1] != layers[0].in_dim:
        raise ShapeMismatch(f"expected (T, {layers[0].in_dim}) features, got {mfcc_seq.shape}")
    if stream is None:
        stream = StageStream(layers, lookahead)
    out = []
    for x in mfcc_seq:
        stream.last_input = x
        out.extend(stream.shift.push(_acoustic_step(layers, stream.rstate, x)))
    if flush and stream.shift.enabled and stream.last_input is not None:
        out.extend(stream.shift.push(_acoustic_step(layers, stream.rstate, stream.last_input)))
    if not out:
        return np.zeros((0, layers[3].out_dim), dtype=np.float32)
    return np.array(out, dtype=np.float32)


def classify_phonemes(mfcc_seq, bundle: nn.ModelBundle,
                      state: nn.RecurrentState = None) -> np.ndarray:
    """Per-frame phoneme distributions (full classifier path, no shift)."""
    layers = bundle[nn.ACOUSTIC]
    mfcc_seq = np.asarray(mfcc_seq, dtype=np.float32)
    if state is None:
        state = nn.RecurrentState(layers)
    return np.array(
        [nn.dense_forward(_acoustic_step(layers, state, x), layers[4]) for x in mfcc_seq]
    )


def conversion_input(ppg: np.ndarray, f0_mapped_hz: float, voiced: bool,
                     tgt_index: int, n_speakers: int) -> np.ndarray:
    """Concatenate [ppg | encoded F0 | VUF | target one-hot]."""
    one_hot = np.zeros(n_speakers, dtype=np.float32)
    if not 0 <= tgt_index < n_speakers:
        raise ShapeMismatch(f"speaker index {tgt_index} out of range for {n_speakers} speakers")
    one_hot[tgt_index] = 1.0
    scalars = np.array([pitch.encode_f0(f0_mapped_hz), 1.0 if voiced else 0.0], dtype=np.float32)
    return np.concatenate([np.asarray(ppg, dtype=np.float32), scalars, one_hot])


def conversion_forward(ppg_seq, pitch_seq, tgt_profile: pitch.SpeakerProfile,
                       bundle: nn.ModelBundle, stream: StageStream = None,
                       lookahead: bool = False, flush: bool = True) -> np.ndarray:
    """Vocoder-feature sequence from PPGs and already-mapped pitch.

    pitch_seq holds one (f0_mapped_hz, voiced) pair per PPG frame.
    """
    layers = bundle[nn.CONVERSION]
    n_speakers = bundle.n_speakers
    if stream is None:
        stream = StageStream(layers, lookahead)
    out = []
    for ppg_vec, (f0_hz, voiced) in zip(ppg_seq, pitch_seq, strict=True):
        stream.last_input = conversion_input(ppg_vec, f0_hz, voiced,
                                             tgt_profile.one_hot_index, n_speakers)
        out.extend(stream.shift.push(
            _conversion_step(layers, stream.rstate, stream.last_input)))
    if flush and stream.shift.enabled and stream.last_input is not None:
        out.extend(stream.shift.push(
            _conversion_step(layers, stream.rstate, stream.last_input)))
    if not out:
        return np.zeros((0, layers[4].out_dim), dtype=np.float32)
    return np.array(out, dtype=np.float32)


class _StreamingConv:
    """Width-3 edge-replicated convolution that emits out[t] once x[t+1] arrives."""

    def __init__(self, layer: nn.LayerSpec):
        self.layer = layer
        self.prev = None
        self.cur = None

    def _apply(self, a, b, c):
        w, bias = self.layer.weights
        acc = bias.copy()
        for tap, frame in zip(range(3), (a, b, c)):
            acc = acc + frame @ w[tap]
        return nn.activate(acc, self.layer.activation)

    def push(self, x):
        x = np.asarray(x, dtype=np.float32)
        if self.cur is None:
            self.prev = x
            self.cur = x
            return []
        out = self._apply(self.prev, self.cur, x)
        self.prev, self.cur = self.cur, x
        return [out]

    def flush(self):
        if self.cur is None:
            return []
        out = self._apply(self.prev, self.cur, self.cur)
        self.prev, self.cur = self.cur, self.cur
        return [out]


def frame_rate_forward(features_seq, bundle: nn.ModelBundle) -> np.ndarray:
    """Per-frame conditioning vectors (receptive field 5, look-ahead 2 frames)."""
    layers = bundle[nn.FRAME_RATE]
    features_seq = np.asarray(features_seq, dtype=np.float32)
    if features_seq.ndim != 2 or features_seq.shape[1] != layers[0].in_dim:
        raise ShapeMismatch(
            f"expected (T, {layers[0].in_dim}) features, got {features_seq.shape}"
        )
    h = nn.conv1d_forward(features_seq, layers[0])
    h = nn.conv1d_forward(h, layers[1])
    return np.array(
        [nn.dense_forward(nn.dense_forward(row, layers[2]), layers[3]) for row in h]
    )


class SampleRateState:
    """GRU states, predictor history and previous codes for one synthesis stream."""

    def __init__(self, bundle: nn.ModelBundle):
        m = bundle[nn.SAMPLE_RATE]
        self.h_a = np.zeros(m[3].out_dim, dtype=np.float32)
        self.h_b = np.zeros(m[4].out_dim, dtype=np.float32)
        self.predictor = lpc.PredictorState()
        self.prev_output_code = 128  # mu-law code of 0.0
        self.prev_excitation_code = 128


class SampleRateCell:
    """Precomputed fast path of the sample-rate network.

    The conditioning contribution to both GRUs is constant within a frame and
    each scalar input enters through a 256-row embedding, so per sample only
    three table lookups and the recurrent matvecs remain.
    """

    def __init__(self, bundle: nn.ModelBundle):
        m = bundle[nn.SAMPLE_RATE]
        embed_layers, gru_a, gru_b, fc1, fc2 = m[:3], m[3], m[4], m[5], m[6]
        self.cond_dim = bundle.cond_dim
        embed_dim = bundle.embed_dim
        self.n_a = gru_a.out_dim
        self.n_b = gru_b.out_dim

        w_a, self.b_a = gru_a.weights
        wx_a = w_a[: gru_a.in_dim]
        self.wa_cond = wx_a[: self.cond_dim]
        # per-code tables: embedding(code) @ (its slice of the gru_a input weights)
        self.tables = []
        for i, layer in enumerate(embed_layers):
            rows = layer.weights[0].T + layer.weights[1]  # (256, embed_dim)
            lo = self.cond_dim + i * embed_dim
            self.tables.append(rows @ wx_a[lo : lo + embed_dim])
        wh_a = w_a[gru_a.in_dim :]
        self.wa_h_zr = wh_a[:, : 2 * self.n_a]
        self.wa_h_cand = wh_a[:, 2 * self.n_a :]

        w_b, self.b_b = gru_b.weights
        wx_b = w_b[: gru_b.in_dim]
        self.wb_in = wx_b[: self.n_a]
        self.wb_cond = wx_b[self.n_a :]
        wh_b = w_b[gru_b.in_dim :]
        self.wb_h_zr = wh_b[:, : 2 * self.n_b]
        self.wb_h_cand = wh_b[:, 2 * self.n_b :]

        self.fc1_w, self.fc1_b = fc1.weights
        self.fc2_w, self.fc2_b = fc2.weights

    def frame_setup(self, cond: np.ndarray):
        """Fold the frame's conditioning (and biases) into per-gate offsets."""
        cond = np.asarray(cond, dtype=np.float32)
        if cond.shape != (self.cond_dim,):
            raise ShapeMismatch(f"expected ({self.cond_dim},) conditioning, got {cond.shape}")
        return (cond @ self.wa_cond + self.b_a, cond @ self.wb_cond + self.b_b)

    def logits(self, frame_offsets, state: SampleRateState,
               out_code: int, exc_code: int, pred_code: int) -> np.ndarray:
        ga, gb = frame_offsets
        xa = ga + self.tables[0][out_code] + self.tables[1][exc_code] + self.tables[2][pred_code]
        n_a, n_b = self.n_a, self.n_b
        h = state.h_a
        zr = _sigmoid32(xa[: 2 * n_a] + h @ self.wa_h_zr)
        z = zr[:n_a]
        cand = np.tanh(xa[2 * n_a :] + (zr[n_a:] * h) @ self.wa_h_cand)
        h = h + z * (cand - h)
        state.h_a = h

        xb = gb + h @ self.wb_in
        hb = state.h_b
        zrb = _sigmoid32(xb[: 2 * n_b] + hb @ self.wb_h_zr)
        zb = zrb[:n_b]
        cand_b = np.tanh(xb[2 * n_b :] + (zrb[n_b:] * hb) @ self.wb_h_cand)
        hb = hb + zb * (cand_b - hb)
        state.h_b = hb

        hidden = np.tanh(self.fc1_w @ hb + self.fc1_b)
        return self.fc2_w @ hidden + self.fc2_b


def _sigmoid32(x):
    return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))


def sample_rate_step(cond, prev_output: float, prev_excitation: float, predicted: float,
                     state: SampleRateState, bundle_or_cell, temperature: float,
                     rng) -> tuple[float, float]:
    """One sample of excitation synthesis; returns (excitation, output).

    The three scalar inputs are mu-law coded into embedding lookups; the
    sampled excitation code is decoded and added to the prediction, and the
    result clamped to [-1, 1].
    """
    cell = bundle_or_cell if isinstance(bundle_or_cell, SampleRateCell) \
        else SampleRateCell(bundle_or_cell)
    offsets = cell.frame_setup(cond)
    logits = cell.logits(offsets, state,
                         dsp.mulaw_encode_scalar(prev_output),
                         dsp.mulaw_encode_scalar(prev_excitation),
                         dsp.mulaw_encode_scalar(predicted))
    code = nn.sample_categorical(logits, rng, temperature)
    excitation = float(dsp.MULAW_DECODE_TABLE[code])
    output = min(max(predicted + excitation, -1.0), 1.0)
    return excitation, output


def _synthesize_frame(cell: SampleRateCell, state: SampleRateState, features_row,
                      cond, rng, frame_index: int) -> np.ndarray:
    """160 sample-rate steps conditioned on one feature frame."""
    features_row = np.asarray(features_row, dtype=np.float64)
    try:
        coeffs = lpc.coeffs_for_frame(features_row[:18], frame_index)
    except StreamvoxError as err:
        raise type(err)(f"frame {frame_index}: {err}") from None
    voiced = features_row[19] >= VOICING_THRESHOLD
    temperature = TEMPERATURE_VOICED if voiced else TEMPERATURE_UNVOICED
    offsets = cell.frame_setup(cond)
    hop = dsp.FrameGeometry().hop_samples
    out = np.empty(hop)
    a = coeffs.a
    history = state.predictor.history
    decode_table = dsp.MULAW_DECODE_TABLE
    for i in range(hop):
        predicted = float(a @ history)
        logits = cell.logits(offsets, state, state.prev_output_code,
                             state.prev_excitation_code,
                             dsp.mulaw_encode_scalar(predicted))
        # logits from bounded activations and load-validated weights are finite
        code = nn._categorical_from_cdf(logits.astype(np.float64), rng, temperature)
        excitation = decode_table[code]
        sample = min(max(predicted + excitation, -1.0), 1.0)
        history[1:] = history[:-1]
        history[0] = sample
        state.prev_excitation_code = code
        state.prev_output_code = dsp.mulaw_encode_scalar(sample)
        out[i] = sample
    return out


def synthesize(features_seq, bundle: nn.ModelBundle, seed: int = 0) -> dsp.AudioBuffer:
    """Vocode a feature sequence; emits hop_samples per frame, reproducible by seed."""
    features_seq = np.asarray(features_seq, dtype=np.float32)
    if features_seq.ndim != 2 or features_seq.shape[1] != 20:
        raise ShapeMismatch(f"expected (T, 20) features, got {features_seq.shape}")
    if len(features_seq) == 0:
        raise EmptyInput("no feature frames to synthesize")
    bundle.require(nn.FRAME_RATE, nn.SAMPLE_RATE)
    conds = frame_rate_forward(features_seq, bundle)
    cell = SampleRateCell(bundle)
    state = SampleRateState(bundle)
    rng = np.random.default_rng(seed)
    chunks = [
        _synthesize_frame(cell, state, features_seq[t], conds[t], rng, t)
        for t in range(len(features_seq))
    ]
    return dsp.AudioBuffer(np.concatenate(chunks))


# --- the streaming session -------------------------------------------------------


class ConversionSession:
    """Single-owner streaming converter: push samples in, pull samples out.

    The emitted stream is OUTPUT_SHIFT samples of leading silence followed by
    the synthesized waveform; an equal amount is never emitted at the tail, so
    the output length equals frame_count * hop exactly.
    """

    def __init__(self, bundle: nn.ModelBundle, src_profile: pitch.SpeakerProfile,
                 tgt_profile: pitch.SpeakerProfile, mode: str = "lookahead",
                 seed: int = 0, geom: dsp.FrameGeometry = dsp.FrameGeometry()):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        bundle.require(nn.ACOUSTIC, nn.CONVERSION, nn.FRAME_RATE, nn.SAMPLE_RATE)
        if not (0 <= tgt_profile.one_hot_index < bundle.n_speakers):
            raise ShapeMismatch(
                f"target speaker index {tgt_profile.one_hot_index} out of range "
                f"for a {bundle.n_speakers}-speaker bundle"
            )
        if not src_profile.valid:
            raise InvalidProfile(f"source profile {src_profile.speaker_id!r} has no statistics")
        if not tgt_profile.valid:
            raise InvalidProfile(f"target profile {tgt_profile.speaker_id!r} has no statistics")
        self.bundle = bundle
        self.geom = geom
        self.src_profile = src_profile
        self.tgt_profile = tgt_profile
        self.mode = mode
        lookahead = mode == "lookahead"
        self.rng = np.random.default_rng(seed)

        self._acoustic_state = nn.RecurrentState(bundle[nn.ACOUSTIC])
        self._conversion_state = nn.RecurrentState(bundle[nn.CONVERSION])
        self._acoustic_shift = _ShiftRegister(lookahead)
        self._conversion_shift = _ShiftRegister(lookahead)
        self._conv1 = _StreamingConv(bundle[nn.FRAME_RATE][0])
        self._conv2 = _StreamingConv(bundle[nn.FRAME_RATE][1])
        self._cell = SampleRateCell(bundle)
        self._sr_state = SampleRateState(bundle)
        self._tracker = pitch.PitchTracker(geom)

        self._inbuf = np.zeros(0)
        self._in_total = 0
        self._next_frame = 0
        self._mfcc_hist = []   # last raw mfcc vectors (for causal deltas)
        self._delta_hist = []
        self._pitch_q = []     # (f0_mapped_hz, voiced) per frame, conversion not yet fed
        self._feat_q = []      # feature frames awaiting their conditioning vector
        self._last_x39 = None
        self._last_u = None
        self._synth_frames = 0
        self._out_hold = [np.zeros(OUTPUT_SHIFT)]
        self._flushed = False
        self.stage_seconds = {"dsp": 0.0, "acoustic": 0.0, "conversion": 0.0, "vocoder": 0.0}

    # -- stage plumbing --

    def _deltas_for(self, coeffs: np.ndarray) -> np.ndarray:
        m2 = self._mfcc_hist[-2] if len(self._mfcc_hist) >= 2 else (
            self._mfcc_hist[0] if self._mfcc_hist else coeffs)
        d = (coeffs - m2) / 2.0
        d2_prev = self._delta_hist[-2] if len(self._delta_hist) >= 2 else (
            self._delta_hist[0] if self._delta_hist else d)
        dd = (d - d2_prev) / 2.0
        self._mfcc_hist = (self._mfcc_hist + [coeffs])[-2:]
        self._delta_hist = (self._delta_hist + [d])[-2:]
        return np.concatenate([coeffs, d, dd])

    def _ingest_frame(self, frame: np.ndarray, replay: np.ndarray = None):
        """Run one input frame (or a flush replay) through all stages."""
        if replay is None:
            t0 = time.perf_counter()
            x39 = self._deltas_for(dsp.compute_mfcc(frame, self.geom))
            if self._next_frame == 0:
                self._tracker.prime(frame[: self.geom.frame_len_samples - self.geom.hop_samples])
            pf = self._tracker.push_frame(frame)
            f0_mapped = pitch.map_f0(pf.f0_hz, self.src_profile, self.tgt_profile) \
                if pf.voiced else 0.0
            self._pitch_q.append((f0_mapped, pf.voiced))
            self._last_x39 = x39
            self.stage_seconds["dsp"] += time.perf_counter() - t0
            self._next_frame += 1
        else:
            x39 = replay

        t0 = time.perf_counter()
        acoustic_out = _acoustic_step(self.bundle[nn.ACOUSTIC], self._acoustic_state,
                                      x39.astype(np.float32))
        ppgs = self._acoustic_shift.push(acoustic_out)
        self.stage_seconds["acoustic"] += time.perf_counter() - t0

        feats = []
        for ppg_vec in ppgs:
            f0_mapped, voiced = self._pitch_q.pop(0)
            u = conversion_input(ppg_vec, f0_mapped, voiced,
                                 self.tgt_profile.one_hot_index, self.bundle.n_speakers)
            self._last_u = u
            feats.extend(self._conversion_feed(u))
        return self._run_vocoder_stage(feats)

    def _conversion_feed(self, u: np.ndarray):
        t0 = time.perf_counter()
        released = self._conversion_shift.push(
            _conversion_step(self.bundle[nn.CONVERSION], self._conversion_state, u))
        self.stage_seconds["conversion"] += time.perf_counter() - t0
        return released

    def _run_vocoder_stage(self, feats, conv1_flush=False, conv2_flush=False):
        t0 = time.perf_counter()
        dense_layers = self.bundle[nn.FRAME_RATE][2:]
        c1_list = []
        for f in feats:
            self._feat_q.append(f)
            c1_list.extend(self._conv1.push(f))
        if conv1_flush:
            c1_list.extend(self._conv1.flush())
        conds = []
        for c1 in c1_list:
            conds.extend(self._conv2.push(c1))
        if conv2_flush:
            conds.extend(self._conv2.flush())
        emitted = []
        for cond in conds:
            cond = nn.dense_forward(nn.dense_forward(cond, dense_layers[0]), dense_layers[1])
            features_row = self._feat_q.pop(0)
            samples = _synthesize_frame(self._cell, self._sr_state, features_row, cond,
                                        self.rng, self._synth_frames)
            self._synth_frames += 1
            emitted.append(self._emit(samples))
        self.stage_seconds["vocoder"] += time.perf_counter() - t0
        return emitted

    def _emit(self, samples: np.ndarray) -> np.ndarray:
        """Queue one synthesized frame; release exactly hop samples."""
        self._out_hold.append(samples)
        held = np.concatenate(self._out_hold)
        out, rest = held[: self.geom.hop_samples], held[self.geom.hop_samples :]
        self._out_hold = [rest]
        return out

    # -- public API --

    def push(self, samples) -> np.ndarray:
        """Feed PCM samples; returns whatever output is ready (possibly empty)."""
        if self._flushed:
            raise RuntimeError("session already flushed")
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size:
            samples = np.clip(samples, -1.0, 1.0)
            self._inbuf = np.concatenate([self._inbuf, samples])
            self._in_total += len(samples)
        out = []
        frame_len, hop = self.geom.frame_len_samples, self.geom.hop_samples
        while True:
            start = self._next_frame * hop - (self._in_total - len(self._inbuf))
            if start + frame_len > len(self._inbuf):
                break
            out.extend(self._ingest_frame(self._inbuf[start : start + frame_len]))
            if start >= 4 * frame_len:  # drop consumed history, keep memory bounded
                self._inbuf = self._inbuf[start:]
        return np.concatenate(out) if out else np.zeros(0)

    def flush(self) -> np.ndarray:
        """Process the zero-padded tail and drain every pending stage."""
        if self._flushed:
            return np.zeros(0)
        self._flushed = True
        if self._in_total == 0:
            raise EmptyInput("no audio was pushed")
        frame_len, hop = self.geom.frame_len_samples, self.geom.hop_samples
        total_frames = dsp.frame_count(self._in_total, self.geom)
        out = []
        consumed = self._in_total - len(self._inbuf)
        while self._next_frame < total_frames:
            start = self._next_frame * hop - consumed
            frame = self._inbuf[max(start, 0) : start + frame_len]
            frame = np.concatenate([frame, np.zeros(frame_len - len(frame))])
            out.extend(self._ingest_frame(frame))
        if self.mode == "lookahead":
            # replay the final inputs once through each shifted stage
            out.extend(self._ingest_frame(None, replay=self._last_x39))
            out.extend(self._run_vocoder_stage(self._conversion_feed(self._last_u)))
        out.extend(self._run_vocoder_stage([], conv1_flush=True))
        out.extend(self._run_vocoder_stage([], conv1_flush=False, conv2_flush=True))
        return np.concatenate(out) if out else np.zeros(0)

    @property
    def frames_processed(self) -> int:
        return self._synth_frames


def convert(request: ConversionRequest) -> dsp.AudioBuffer:
    """One-shot conversion; identical to pushing the audio through a session."""
    if len(request.audio) == 0:
        raise EmptyInput("convert: empty audio")
    session = ConversionSession(request.bundle, request.src_profile, request.tgt_profile,
                                request.mode, request.seed)
    head = session.push(request.audio.samples)
    tail = session.flush()
    return dsp.AudioBuffer(np.concatenate([head, tail]))


def analysis_features(audio: dsp.AudioBuffer,
                      geom: dsp.FrameGeometry = dsp.FrameGeometry()):
    """Analysis-side features of an utterance.

    Returns (mfcc39, vocoder_features): the acoustic model's (T, 39) input and
    the (T, 20) Bark-cepstrum + encoded pitch + pitch correlation rows that the
    conversion model is trained to reproduce.
    """
    frames = dsp.frame_signal(audio, geom)
    mfcc39 = dsp.append_deltas(np.array([dsp.compute_mfcc(f, geom) for f in frames]))
    tracker = pitch.PitchTracker(geom)
    tracker.prime(frames[0][: geom.frame_len_samples - geom.hop_samples])
    voc = np.empty((len(frames), 20))
    for k, frame in enumerate(frames):
        pf = tracker.push_frame(frame)
        voc[k, :18] = dsp.bark_cepstrum(frame, geom)
        voc[k, 18] = pitch.encode_f0(pf.f0_hz)
        voc[k, 19] = pf.pitch_corr
    return mfcc39, voc
