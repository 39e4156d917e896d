"""Bundle export, import and cross-implementation parity checks.

This is trainkit's own implementation of the engine's binary weight format
(little-endian: magic ACVC, version 1, models -> layers -> name/kind/dims/
activation + two tensors each). Parity compares trainkit-side forward passes
against the engine's `eval` subcommand run in a subprocess, per the format
boundary contract (max abs diff <= 1e-5 on random inputs).
"""

import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from .models import AcousticModel, ConversionModel, FrameRateNet, SampleRateNet

MAGIC = b"ACVC"
VERSION = 1
KIND = {"dense": 0, "lstm": 1, "gru": 2, "conv1d": 3}
ACT = {"linear": 0, "relu": 1, "tanh": 2, "sigmoid": 3, "softmax": 4}
KIND_NAMES = {v: k for k, v in KIND.items()}
ACT_NAMES = {v: k for k, v in ACT.items()}

PARITY_TOLERANCE = 1e-5


def _np32(tensor) -> np.ndarray:
    return np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))


def _layer(name, kind, in_dim, out_dim, activation, w, b, kernel_width=0):
    return {
        "name": name, "kind": kind, "in_dim": in_dim, "out_dim": out_dim,
        "activation": activation, "kernel_width": kernel_width,
        "tensors": [np.asarray(w, dtype="<f4"), np.asarray(b, dtype="<f4")],
    }


def _dense(name, layer, activation):
    return _layer(name, "dense", layer.in_dim, layer.out_dim, activation,
                  _np32(layer.weight), _np32(layer.bias))


def _lstm(name, layer, swap_gates=False):
    w, b = _np32(layer.weight), _np32(layer.bias)
    if swap_gates:
        n = layer.out_dim
        w = w.copy()
        b = b.copy()
        w[:, :n], w[:, n : 2 * n] = w[:, n : 2 * n].copy(), w[:, :n].copy()
        b[:n], b[n : 2 * n] = b[n : 2 * n].copy(), b[:n].copy()
    return _layer(name, "lstm", layer.in_dim, layer.out_dim, "linear", w, b)


def _gru(name, layer):
    return _layer(name, "gru", layer.in_dim, layer.out_dim, "linear",
                  _np32(layer.weight), _np32(layer.bias))


def _conv(name, layer):
    return _layer(name, "conv1d", layer.in_dim, layer.out_dim, "tanh",
                  _np32(layer.weight), _np32(layer.bias), kernel_width=3)


def _embedding(name, rows_param):
    rows = _np32(rows_param)  # (256, E): engine stores dense W (E, 256)
    return _layer(name, "dense", 256, rows.shape[1], "linear",
                  rows.T.copy(), np.zeros(rows.shape[1], dtype="<f4"))


def bundle_layers(acoustic: AcousticModel = None, conversion: ConversionModel = None,
                  frame_net: FrameRateNet = None, sample_net: SampleRateNet = None,
                  swap_lstm_gates: bool = False) -> dict:
    """Engine-format layer descriptions for whichever models are present."""
    models = {}
    if acoustic is not None:
        models["acoustic"] = [
            _dense("fc_in_1", acoustic.fc1, "relu"),
            _dense("fc_in_2", acoustic.fc2, "relu"),
            _lstm("lstm_1", acoustic.lstm1, swap_gates=swap_lstm_gates),
            _lstm("lstm_2", acoustic.lstm2),
            _dense("classifier", acoustic.classifier, "softmax"),
        ]
    if conversion is not None:
        models["conversion"] = [
            _dense("fc_in", conversion.fc_in, "relu"),
            _lstm("lstm_1", conversion.lstm1),
            _lstm("lstm_2", conversion.lstm2),
            _dense("fc_mid", conversion.fc_mid, "relu"),
            _dense("fc_out", conversion.fc_out, "linear"),
        ]
    if frame_net is not None:
        models["frame_rate"] = [
            _conv("conv_1", frame_net.conv1),
            _conv("conv_2", frame_net.conv2),
            _dense("fc_1", frame_net.fc1, "tanh"),
            _dense("fc_2", frame_net.fc2, "tanh"),
        ]
    if sample_net is not None:
        models["sample_rate"] = [
            _embedding("embed_output", sample_net.embed_output),
            _embedding("embed_excitation", sample_net.embed_excitation),
            _embedding("embed_predicted", sample_net.embed_predicted),
            _gru("gru_a", sample_net.gru_a),
            _gru("gru_b", sample_net.gru_b),
            _dense("dual_fc_1", sample_net.fc1, "tanh"),
            _dense("dual_fc_2", sample_net.fc2, "softmax"),
        ]
    return models


def write_bundle(models: dict, path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(models))
    for model_name, layers in models.items():
        raw = model_name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", len(layers))
        for layer in layers:
            raw = layer["name"].encode("utf-8")
            out += struct.pack("<H", len(raw)) + raw
            out += struct.pack("<BIIIBB", KIND[layer["kind"]], layer["in_dim"],
                               layer["out_dim"], layer["kernel_width"],
                               ACT[layer["activation"]], 0)
            for tensor in layer["tensors"]:
                out += struct.pack("<I", tensor.ndim)
                out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
                out += tensor.tobytes()
    Path(path).write_bytes(bytes(out))


def read_bundle(path) -> dict:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated bundle")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ValueError("bad magic")
    version = struct.unpack("<I", take(4))[0]
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    models = {}
    for _ in range(struct.unpack("<I", take(4))[0]):
        name_len = struct.unpack("<H", take(2))[0]
        model_name = take(name_len).decode("utf-8")
        layers = []
        for _ in range(struct.unpack("<I", take(4))[0]):
            name_len = struct.unpack("<H", take(2))[0]
            layer_name = take(name_len).decode("utf-8")
            kind, in_dim, out_dim, kw, act, mask = struct.unpack("<BIIIBB", take(15))
            tensors = []
            for _ in range(2):
                rank = struct.unpack("<I", take(4))[0]
                dims = struct.unpack(f"<{rank}I", take(4 * rank))
                count = int(np.prod(dims))
                tensors.append(np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy())
            if mask:
                raise ValueError("trainkit bundles never carry sparsity masks")
            layers.append({"name": layer_name, "kind": KIND_NAMES[kind], "in_dim": in_dim,
                           "out_dim": out_dim, "activation": ACT_NAMES[act],
                           "kernel_width": kw, "tensors": tensors})
        models[model_name] = layers
    return models


def _load_params(module_layers, read_layers):
    for (w_param, b_param), layer in zip(module_layers, read_layers):
        w_param.data = torch.from_numpy(layer["tensors"][0].copy())
        b_param.data = torch.from_numpy(layer["tensors"][1].copy())


def models_from_bundle(path):
    """Rebuild torch models from an engine bundle (dims come from the shapes)."""
    raw = read_bundle(path)
    ac = raw["acoustic"]
    acoustic = AcousticModel(
        n_phonemes=ac[4]["out_dim"],
        dense=(ac[0]["out_dim"], ac[1]["out_dim"]),
        lstm=(ac[2]["out_dim"], ac[3]["out_dim"]))
    _load_params([(acoustic.fc1.weight, acoustic.fc1.bias),
                  (acoustic.fc2.weight, acoustic.fc2.bias),
                  (acoustic.lstm1.weight, acoustic.lstm1.bias),
                  (acoustic.lstm2.weight, acoustic.lstm2.bias),
                  (acoustic.classifier.weight, acoustic.classifier.bias)], ac)

    cv = raw["conversion"]
    ppg_dim = ac[3]["out_dim"]
    conversion = ConversionModel(
        ppg_dim=ppg_dim,
        n_speakers=cv[0]["in_dim"] - ppg_dim - 2,
        dense=cv[0]["out_dim"],
        lstm=(cv[1]["out_dim"], cv[2]["out_dim"]),
        head=cv[3]["out_dim"])
    _load_params([(conversion.fc_in.weight, conversion.fc_in.bias),
                  (conversion.lstm1.weight, conversion.lstm1.bias),
                  (conversion.lstm2.weight, conversion.lstm2.bias),
                  (conversion.fc_mid.weight, conversion.fc_mid.bias),
                  (conversion.fc_out.weight, conversion.fc_out.bias)], cv)

    fr = raw["frame_rate"]
    frame_net = FrameRateNet(conv=fr[0]["out_dim"], cond=fr[3]["out_dim"])
    _load_params([(frame_net.conv1.weight, frame_net.conv1.bias),
                  (frame_net.conv2.weight, frame_net.conv2.bias),
                  (frame_net.fc1.weight, frame_net.fc1.bias),
                  (frame_net.fc2.weight, frame_net.fc2.bias)], fr)

    sr = raw["sample_rate"]
    embed = sr[0]["out_dim"]
    sample_net = SampleRateNet(cond=fr[3]["out_dim"], embed=embed,
                               gru_a=sr[3]["out_dim"], gru_b=sr[4]["out_dim"],
                               head=sr[5]["out_dim"])
    sample_net.embed_output.data = torch.from_numpy(sr[0]["tensors"][0].T.copy())
    sample_net.embed_excitation.data = torch.from_numpy(sr[1]["tensors"][0].T.copy())
    sample_net.embed_predicted.data = torch.from_numpy(sr[2]["tensors"][0].T.copy())
    _load_params([(sample_net.gru_a.weight, sample_net.gru_a.bias),
                  (sample_net.gru_b.weight, sample_net.gru_b.bias),
                  (sample_net.fc1.weight, sample_net.fc1.bias),
                  (sample_net.fc2.weight, sample_net.fc2.bias)], sr[3:])
    return acoustic, conversion, frame_net, sample_net


# --- parity against the engine --------------------------------------------------


def _engine_eval(bundle_path, model, input_path, output_path, extra=()):
    cmd = [sys.executable, "-m", "streamvox.cli", "eval", "--bundle", str(bundle_path),
           "--model", model, "--input", str(input_path), "--output", str(output_path),
           *extra]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"engine eval failed for {model}: {proc.stderr.strip()}")
    return np.load(output_path)


@torch.no_grad()
def parity_report(bundle_path, acoustic, conversion, frame_net, sample_net,
                  seed: int = 0, n_inputs: int = 10) -> dict:
    """Max abs engine-vs-trainkit forward difference per model."""
    rng = np.random.default_rng(seed)
    report = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        x = rng.normal(0, 0.5, (n_inputs, 39)).astype(np.float32)
        np.save(tmp / "ac_in.npy", x)
        engine = _engine_eval(bundle_path, "acoustic", tmp / "ac_in.npy", tmp / "ac_out.npy")
        ours = acoustic(torch.from_numpy(x[None]))[0][0].numpy()
        report["acoustic"] = float(np.max(np.abs(engine - ours)))

        u = rng.normal(0, 0.5, (n_inputs, conversion.in_dim)).astype(np.float32)
        np.save(tmp / "cv_in.npy", u)
        engine = _engine_eval(bundle_path, "conversion", tmp / "cv_in.npy", tmp / "cv_out.npy")
        ours = conversion(torch.from_numpy(u[None]))[0].numpy()
        report["conversion"] = float(np.max(np.abs(engine - ours)))

        f = rng.normal(0, 0.8, (n_inputs, 20)).astype(np.float32)
        np.save(tmp / "fr_in.npy", f)
        engine = _engine_eval(bundle_path, "frame_rate", tmp / "fr_in.npy", tmp / "fr_out.npy")
        ours = frame_net(torch.from_numpy(f[None]))[0].numpy()
        report["frame_rate"] = float(np.max(np.abs(engine - ours)))

        cond = np.tanh(rng.normal(0, 0.8, (n_inputs, frame_net.cond_dim))).astype(np.float32)
        codes = rng.integers(0, 256, (n_inputs, 3)).astype(np.int64)
        np.savez(tmp / "sr_in.npz", cond=cond, codes=codes)
        engine = _engine_eval(bundle_path, "sample_rate", tmp / "sr_in.npz", tmp / "sr_out.npy")
        logits, _ = sample_net(torch.from_numpy(cond[None]),
                               torch.from_numpy(codes[None, :, 0]),
                               torch.from_numpy(codes[None, :, 1]),
                               torch.from_numpy(codes[None, :, 2]))
        report["sample_rate"] = float(np.max(np.abs(engine - logits[0].numpy())))
    return report


def diagnose_layers(bundle_path, expected_models: dict) -> list:
    """Compare written tensors against the intended parameters, layer by layer.

    Returns (model, layer, max_diff) rows sorted worst-first; pinpoints which
    layer an export bug (e.g. a gate-order swap) lives in.
    """
    written = read_bundle(bundle_path)
    rows = []
    for model_name, layers in expected_models.items():
        for expected, got in zip(layers, written.get(model_name, [])):
            diff = max(float(np.max(np.abs(e - g))) if e.size else 0.0
                       for e, g in zip(expected["tensors"], got["tensors"]))
            rows.append((model_name, expected["name"], diff))
    return sorted(rows, key=lambda r: -r[2])


def check_parity(bundle_path, acoustic, conversion, frame_net, sample_net, seed=0):
    """Raise with the worst-offending layer named if any model exceeds tolerance."""
    report = parity_report(bundle_path, acoustic, conversion, frame_net, sample_net, seed)
    bad = {m: d for m, d in report.items() if d > PARITY_TOLERANCE}
    if bad:
        clean = bundle_layers(acoustic, conversion, frame_net, sample_net)
        rows = diagnose_layers(bundle_path, clean)
        worst = rows[0]
        raise RuntimeError(
            f"parity failure: {json.dumps(bad)}; worst-offending layer "
            f"{worst[0]}/{worst[1]} (weight diff {worst[2]:.3g})")
    return report
