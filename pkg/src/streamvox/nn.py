"""Minimal neural inference kernel and the weight-bundle file format.

Dense, unidirectional LSTM and GRU cells (the GRU optionally carrying a
16x1 block sparsity mask), edge-replicated width-3 convolution, seeded
categorical sampling, and (de)serialization of the engine's binary weight
bundle. All weights and recurrent states are float32; sequence operations
are implemented as per-step loops so streaming and batch evaluation are
the same code path, hence bitwise identical.

Cell conventions (trainkit exports must match them exactly):
  LSTM: packed weight (in+out, 4*out), gate columns i|f|g|o, one bias.
        c' = sig(f)*c + sig(i)*tanh(g); h' = sig(o)*tanh(c').
  GRU:  packed weight (in+out, 3*out), gate columns z|r|cand, one bias.
        cand = tanh([x, r*h] @ W_cand + b_cand); h' = (1-z)*h + z*cand.
  Dense: W (out, in); y = act(W @ x + b).
  Conv1d: W (3, in, out); out[t] = act(sum_tap x[t-1+tap] @ W[tap] + b),
          edges replicated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    NumericalError,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)

MAGIC = b"ACVC"
FORMAT_VERSION = 1
SPARSE_BLOCK_ROWS = 16

KINDS = ("dense", "lstm", "gru", "conv1d")
ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid", "softmax")

# Canonical model names inside a bundle.
ACOUSTIC = "acoustic"
CONVERSION = "conversion"
FRAME_RATE = "frame_rate"
SAMPLE_RATE = "sample_rate"


def _f32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


@dataclass
class LayerSpec:
    """One named layer: kind, dimensions, activation and weight tensors."""

    name: str
    kind: str
    in_dim: int
    out_dim: int
    activation: str = "linear"
    kernel_width: int = 0
    weights: list = field(default_factory=list)
    mask: np.ndarray | None = None  # bool (ceil(rows/16), cols), gru only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeMismatch(f"layer {self.name}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeMismatch(f"layer {self.name}: unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ShapeMismatch(f"layer {self.name}: non-positive dimensions")
        self.weights = [_f32(w) for w in self.weights]
        expected = self._expected_shapes()
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ShapeMismatch(f"layer {self.name}: weight shapes {got}, expected {expected}")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise NumericalError(f"layer {self.name}: non-finite weights")
        if self.mask is not None:
            if self.kind != "gru":
                raise ShapeMismatch(f"layer {self.name}: sparsity mask only valid on gru")
            rows, cols = self.weights[0].shape
            n_rows = -(-rows // SPARSE_BLOCK_ROWS)
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n_rows, cols):
                raise ShapeMismatch(
                    f"layer {self.name}: mask shape {self.mask.shape}, expected {(n_rows, cols)}"
                )
            self.weights[0] = apply_block_mask(self.weights[0], self.mask)

    def _expected_shapes(self):
        if self.kind == "dense":
            return [(self.out_dim, self.in_dim), (self.out_dim,)]
        if self.kind == "lstm":
            return [(self.in_dim + self.out_dim, 4 * self.out_dim), (4 * self.out_dim,)]
        if self.kind == "gru":
            return [(self.in_dim + self.out_dim, 3 * self.out_dim), (3 * self.out_dim,)]
        return [(self.kernel_width, self.in_dim, self.out_dim), (self.out_dim,)]

    @property
    def n_params(self) -> int:
        return int(sum(w.size for w in self.weights))

    @property
    def density(self) -> float:
        """Fraction of retained blocks; 1.0 when the layer carries no mask."""
        return 1.0 if self.mask is None else float(np.mean(self.mask))


def activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "linear":
        return x
    if activation == "relu":
        return np.maximum(x, np.float32(0.0))
    if activation == "tanh":
        return np.tanh(x)
    if activation == "sigmoid":
        return _sigmoid(x)
    return softmax(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.float32(1.0) / (np.float32(1.0) + np.exp(-x))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def _check_vec(x, dim, who) -> np.ndarray:
    x = _f32(x)
    if x.shape != (dim,):
        raise ShapeMismatch(f"{who}: expected input of shape ({dim},), got {x.shape}")
    return x


def dense_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    x = _check_vec(x, layer.in_dim, layer.name)
    w, b = layer.weights
    return activate(w @ x + b, layer.activation)


def lstm_step(x: np.ndarray, state, layer: LayerSpec):
    """One LSTM step; state is (h, c). Returns (h_new, (h_new, c_new))."""
    x = _check_vec(x, layer.in_dim, layer.name)
    h, c = state
    n = layer.out_dim
    w, b = layer.weights
    z = np.concatenate([x, h]) @ w + b
    i = _sigmoid(z[:n])
    f = _sigmoid(z[n : 2 * n])
    g = np.tanh(z[2 * n : 3 * n])
    o = _sigmoid(z[3 * n :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, (h_new, c_new)


def gru_step(x: np.ndarray, state, layer: LayerSpec):
    """One GRU step; state is h. Returns (h_new, h_new)."""
    x = _check_vec(x, layer.in_dim, layer.name)
    h = state
    n = layer.out_dim
    w, b = layer.weights
    xh = np.concatenate([x, h])
    zr = xh @ w[:, : 2 * n] + b[: 2 * n]
    z = _sigmoid(zr[:n])
    r = _sigmoid(zr[n:])
    cand = np.tanh(np.concatenate([x, r * h]) @ w[:, 2 * n :] + b[2 * n :])
    h_new = (np.float32(1.0) - z) * h + z * cand
    return h_new, h_new


def conv1d_forward(frames: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Width-3 convolution over a frame sequence with edge replication."""
    frames = _f32(frames)
    if frames.ndim != 2 or frames.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"{layer.name}: expected (T, {layer.in_dim}) frames, got {frames.shape}")
    if layer.kernel_width != 3:
        raise ShapeMismatch(f"{layer.name}: kernel_width must be 3")
    out = np.empty((len(frames), layer.out_dim), dtype=np.float32)
    for t in range(len(frames)):
        out[t] = conv1d_step(frames, t, layer)
    return out


def conv1d_step(frames: np.ndarray, t: int, layer: LayerSpec) -> np.ndarray:
    """Output frame t of the width-3 convolution (edge frames replicated)."""
    w, b = layer.weights
    last = len(frames) - 1
    acc = b.copy()
    for tap in range(3):
        src = min(max(t - 1 + tap, 0), last)
        acc = acc + frames[src] @ w[tap]
    return activate(acc, layer.activation)


def block_sparse_matvec(w: np.ndarray, mask: np.ndarray, x: np.ndarray) -> np.ndarray:
    """x @ w accumulated block by block over the retained 16x1 blocks.

    Reference kernel for the sparse product; accumulates in float64.
    """
    rows, cols = w.shape
    n_rows = mask.shape[0]
    pad = n_rows * SPARSE_BLOCK_ROWS - rows
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if pad:
        w = np.vstack([w, np.zeros((pad, cols))])
        x = np.concatenate([x, np.zeros(pad)])
    w_blocks = w.reshape(n_rows, SPARSE_BLOCK_ROWS, cols)
    x_blocks = x.reshape(n_rows, SPARSE_BLOCK_ROWS)
    out = np.zeros(cols)
    block_row, col = np.nonzero(mask)
    if len(block_row):
        contrib = np.einsum("ki,ki->k", x_blocks[block_row], w_blocks[block_row, :, col])
        np.add.at(out, col, contrib)
    return out


def apply_block_mask(w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the weight entries of dropped 16x1 blocks."""
    rows, cols = w.shape
    expanded = np.repeat(mask, SPARSE_BLOCK_ROWS, axis=0)[:rows]
    return _f32(w * expanded)


def _categorical_from_cdf(logits64: np.ndarray, rng, temperature: float) -> int:
    """Shared sampling math: unnormalized softmax CDF, inverse-CDF draw."""
    cdf = np.exp((logits64 - logits64.max()) / temperature).cumsum()
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_categorical(logits: np.ndarray, rng, temperature: float = 1.0) -> int:
    """Inverse-CDF draw from softmax(logits / temperature); seeded, reproducible."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return _categorical_from_cdf(logits, rng, temperature)


class RecurrentState:
    """Per-stream hidden state for a stack of layers; single-owner."""

    def __init__(self, layers: list[LayerSpec]):
        self.layers = layers
        self.states = {}
        self.reset()

    def reset(self) -> None:
        for idx, layer in enumerate(self.layers):
            if layer.kind == "lstm":
                self.states[idx] = (
                    np.zeros(layer.out_dim, dtype=np.float32),
                    np.zeros(layer.out_dim, dtype=np.float32),
                )
            elif layer.kind == "gru":
                self.states[idx] = np.zeros(layer.out_dim, dtype=np.float32)


@dataclass
class ModelBundle:
    """Named layer stacks plus everything derivable from their shapes."""

    models: dict[str, list[LayerSpec]]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        validate_bundle(self)

    def __getitem__(self, name: str) -> list[LayerSpec]:
        return self.models[name]

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.models]
        if missing:
            raise ShapeMismatch(f"bundle is missing model(s): {', '.join(missing)}")

    def param_count(self, model: str) -> int:
        return sum(layer.n_params for layer in self.models[model])

    @property
    def ppg_dim(self) -> int:
        self.require(ACOUSTIC)
        return self.models[ACOUSTIC][3].out_dim

    @property
    def n_phonemes(self) -> int:
        self.require(ACOUSTIC)
        return self.models[ACOUSTIC][4].out_dim

    @property
    def n_speakers(self) -> int:
        self.require(ACOUSTIC, CONVERSION)
        return self.models[CONVERSION][0].in_dim - self.ppg_dim - 2

    @property
    def feature_dim(self) -> int:
        self.require(CONVERSION)
        return self.models[CONVERSION][4].out_dim

    @property
    def cond_dim(self) -> int:
        self.require(FRAME_RATE)
        return self.models[FRAME_RATE][3].out_dim

    @property
    def embed_dim(self) -> int:
        self.require(SAMPLE_RATE)
        return self.models[SAMPLE_RATE][0].out_dim


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeMismatch(message)


def _check_chain(name: str, layers: list[LayerSpec]) -> None:
    for prev, cur in zip(layers, layers[1:]):
        _expect(
            cur.in_dim == prev.out_dim,
            f"{name}: layer {cur.name} input {cur.in_dim} != previous output {prev.out_dim}",
        )


def validate_bundle(bundle: ModelBundle) -> None:
    """Check every present model against its required topology."""
    for name in bundle.models:
        _expect(name in (ACOUSTIC, CONVERSION, FRAME_RATE, SAMPLE_RATE), f"unknown model {name!r}")

    if ACOUSTIC in bundle.models:
        m = bundle.models[ACOUSTIC]
        _expect(len(m) == 5, "acoustic: expected 5 layers")
        _expect([l.kind for l in m] == ["dense", "dense", "lstm", "lstm", "dense"],
                "acoustic: expected dense,dense,lstm,lstm,dense")
        _expect(m[0].activation == "relu" and m[1].activation == "relu",
                "acoustic: front dense layers must be relu")
        _expect(m[4].activation == "softmax", "acoustic: classifier head must be softmax")
        _check_chain(ACOUSTIC, m)

    if CONVERSION in bundle.models:
        m = bundle.models[CONVERSION]
        _expect(len(m) == 5, "conversion: expected 5 layers")
        _expect([l.kind for l in m] == ["dense", "lstm", "lstm", "dense", "dense"],
                "conversion: expected dense,lstm,lstm,dense,dense")
        _expect(m[0].activation == "relu" and m[3].activation == "relu",
                "conversion: dense layers must be relu")
        _expect(m[4].activation == "linear", "conversion: output head must be linear")
        _check_chain(CONVERSION, m)

    if FRAME_RATE in bundle.models:
        m = bundle.models[FRAME_RATE]
        _expect(len(m) == 4, "frame_rate: expected 4 layers")
        _expect([l.kind for l in m] == ["conv1d", "conv1d", "dense", "dense"],
                "frame_rate: expected conv1d,conv1d,dense,dense")
        _expect(all(l.kernel_width == 3 for l in m[:2]), "frame_rate: convolutions must be width 3")
        _check_chain(FRAME_RATE, m)

    if SAMPLE_RATE in bundle.models:
        m = bundle.models[SAMPLE_RATE]
        _expect(len(m) == 7, "sample_rate: expected 7 layers")
        _expect([l.kind for l in m] == ["dense", "dense", "dense", "gru", "gru", "dense", "dense"],
                "sample_rate: expected 3 embeddings, 2 gru, 2 dense")
        embed = m[:3]
        _expect(all(l.in_dim == 256 for l in embed), "sample_rate: embeddings must index 256 codes")
        _expect(len({l.out_dim for l in embed}) == 1, "sample_rate: embedding dims must agree")
        _expect(m[5].in_dim == m[4].out_dim, "sample_rate: head must consume the second gru")
        _expect(m[6].in_dim == m[5].out_dim and m[6].out_dim == 256,
                "sample_rate: head must emit 256 logits")
        if FRAME_RATE in bundle.models:
            cond = bundle.models[FRAME_RATE][3].out_dim
            _expect(m[3].in_dim == cond + 3 * embed[0].out_dim,
                    "sample_rate: first gru must consume conditioning plus 3 embeddings")
            _expect(m[4].in_dim == m[3].out_dim + cond,
                    "sample_rate: second gru must consume first gru output plus conditioning")

    if ACOUSTIC in bundle.models and CONVERSION in bundle.models:
        n = bundle.models[CONVERSION][0].in_dim - bundle.models[ACOUSTIC][3].out_dim - 2
        _expect(n >= 1, "conversion: input must be ppg + f0 + vuf + at least one speaker")


# --- binary serialization ----------------------------------------------------

_KIND_CODES = {k: i for i, k in enumerate(KINDS)}
_ACT_CODES = {a: i for i, a in enumerate(ACTIVATIONS)}


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"file ends inside {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u16(what)
        return self.take(n, what).decode("utf-8")


def save_bundle(bundle: ModelBundle) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", bundle.format_version)
    out += struct.pack("<I", len(bundle.models))
    for model_name, layers in bundle.models.items():
        encoded = model_name.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<I", len(layers))
        for layer in layers:
            name = layer.name.encode("utf-8")
            out += struct.pack("<H", len(name)) + name
            out += struct.pack(
                "<BIIIBB",
                _KIND_CODES[layer.kind],
                layer.in_dim,
                layer.out_dim,
                layer.kernel_width,
                _ACT_CODES[layer.activation],
                1 if layer.mask is not None else 0,
            )
            for w in layer.weights:
                out += struct.pack("<I", w.ndim)
                out += struct.pack(f"<{w.ndim}I", *w.shape)
                out += w.astype("<f4").tobytes()
            if layer.mask is not None:
                bits = np.packbits(layer.mask.reshape(-1).astype(np.uint8))
                out += bits.tobytes()
    return bytes(out)


def load_bundle(data: bytes) -> ModelBundle:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise BadMagic("not a weight bundle (bad magic)")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported bundle version {version}")
    models: dict[str, list[LayerSpec]] = {}
    for _ in range(reader.u32("model count")):
        model_name = reader.string("model name")
        layers = []
        for _ in range(reader.u32(f"{model_name} layer count")):
            layer_name = reader.string(f"{model_name} layer name")
            where = f"{model_name}/{layer_name}"
            kind_code = reader.u8(where)
            in_dim = reader.u32(where)
            out_dim = reader.u32(where)
            kernel_width = reader.u32(where)
            act_code = reader.u8(where)
            mask_present = reader.u8(where)
            if kind_code >= len(KINDS):
                raise ShapeMismatch(f"{where}: unknown layer kind code {kind_code}")
            if act_code >= len(ACTIVATIONS):
                raise ShapeMismatch(f"{where}: unknown activation code {act_code}")
            weights = []
            for _ in range(2):
                rank = reader.u32(f"{where} tensor rank")
                if rank == 0 or rank > 3:
                    raise ShapeMismatch(f"{where}: bad tensor rank {rank}")
                dims = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"{where} tensor dims"))
                count = int(np.prod(dims))
                raw = reader.take(4 * count, f"{where} tensor data")
                weights.append(np.frombuffer(raw, dtype="<f4").reshape(dims).copy())
            mask = None
            if mask_present:
                if KINDS[kind_code] != "gru":
                    raise ShapeMismatch(f"{where}: sparsity mask only valid on gru")
                n_rows = -(-(in_dim + out_dim) // SPARSE_BLOCK_ROWS)
                cols = 3 * out_dim
                raw = reader.take(-(-(n_rows * cols) // 8), f"{where} mask")
                bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: n_rows * cols]
                mask = bits.astype(bool).reshape(n_rows, cols)
            try:
                layers.append(LayerSpec(layer_name, KINDS[kind_code], in_dim, out_dim,
                                        ACTIVATIONS[act_code], kernel_width, weights, mask))
            except (ShapeMismatch, NumericalError) as err:
                raise type(err)(f"{where}: {err}") from None
        models[model_name] = layers
    if reader.pos != len(data):
        raise TruncatedFile("trailing bytes after the last declared tensor")
    return ModelBundle(models, version)


def load_bundle_file(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return load_bundle(fh.read())


def save_bundle_file(bundle: ModelBundle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_bundle(bundle))


# --- stock layouts ------------------------------------------------------------

ENGINE_DIMS = {
    "mfcc_dim": 39,
    "feature_dim": 20,
    "acoustic_dense": (256, 256),
    "acoustic_lstm": (224, 512),
    "conversion_dense": 256,
    "conversion_lstm": (352, 352),
    "conversion_head": 256,
    "frame_conv": 128,
    "cond_dim": 128,
    "embed_dim": 64,
    "gru_dims": (256, 16),
    "head_hidden": 256,
}

TOY_DIMS = {
    **ENGINE_DIMS,
    "acoustic_dense": (32, 32),
    "acoustic_lstm": (64, 64),
    "conversion_dense": 48,
    "conversion_lstm": (64, 64),
    "conversion_head": 48,
    "frame_conv": 48,
    "gru_dims": (64, 16),
    "head_hidden": 64,
}


def build_bundle(n_phonemes: int, n_speakers: int, dims: dict = ENGINE_DIMS,
                 init=None) -> ModelBundle:
    """Assemble a structurally valid bundle; init(shape) supplies weights (zeros if None)."""
    if init is None:
        init = lambda shape: np.zeros(shape, dtype=np.float32)
    d = dims

    def dense(name, i, o, act):
        return LayerSpec(name, "dense", i, o, act, 0, [init((o, i)), init((o,))])

    def lstm(name, i, o):
        return LayerSpec(name, "lstm", i, o, "linear", 0, [init((i + o, 4 * o)), init((4 * o,))])

    def gru(name, i, o):
        return LayerSpec(name, "gru", i, o, "linear", 0, [init((i + o, 3 * o)), init((3 * o,))])

    def conv(name, i, o, act="tanh"):
        return LayerSpec(name, "conv1d", i, o, act, 3, [init((3, i, o)), init((o,))])

    ppg = d["acoustic_lstm"][1]
    models = {
        ACOUSTIC: [
            dense("fc_in_1", d["mfcc_dim"], d["acoustic_dense"][0], "relu"),
            dense("fc_in_2", d["acoustic_dense"][0], d["acoustic_dense"][1], "relu"),
            lstm("lstm_1", d["acoustic_dense"][1], d["acoustic_lstm"][0]),
            lstm("lstm_2", d["acoustic_lstm"][0], ppg),
            dense("classifier", ppg, n_phonemes, "softmax"),
        ],
        CONVERSION: [
            dense("fc_in", ppg + 2 + n_speakers, d["conversion_dense"], "relu"),
            lstm("lstm_1", d["conversion_dense"], d["conversion_lstm"][0]),
            lstm("lstm_2", d["conversion_lstm"][0], d["conversion_lstm"][1]),
            dense("fc_mid", d["conversion_lstm"][1], d["conversion_head"], "relu"),
            dense("fc_out", d["conversion_head"], d["feature_dim"], "linear"),
        ],
        FRAME_RATE: [
            conv("conv_1", d["feature_dim"], d["frame_conv"]),
            conv("conv_2", d["frame_conv"], d["frame_conv"]),
            dense("fc_1", d["frame_conv"], d["cond_dim"], "tanh"),
            dense("fc_2", d["cond_dim"], d["cond_dim"], "tanh"),
        ],
        SAMPLE_RATE: [
            dense("embed_output", 256, d["embed_dim"], "linear"),
            dense("embed_excitation", 256, d["embed_dim"], "linear"),
            dense("embed_predicted", 256, d["embed_dim"], "linear"),
            gru("gru_a", d["cond_dim"] + 3 * d["embed_dim"], d["gru_dims"][0]),
            gru("gru_b", d["gru_dims"][0] + d["cond_dim"], d["gru_dims"][1]),
            dense("dual_fc_1", d["gru_dims"][1], d["head_hidden"], "tanh"),
            dense("dual_fc_2", d["head_hidden"], 256, "softmax"),
        ],
    }
    return ModelBundle(models)


def random_bundle(n_phonemes: int, n_speakers: int, dims: dict = TOY_DIMS,
                  seed: int = 0, scale: float = 0.08) -> ModelBundle:
    rng = np.random.default_rng(seed)
    return build_bundle(n_phonemes, n_speakers, dims,
                        init=lambda shape: rng.normal(0.0, scale, shape).astype(np.float32))
