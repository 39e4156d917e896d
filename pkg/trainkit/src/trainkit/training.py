"""Training loops: acoustic, conversion, vocoder, and per-speaker fine-tuning.

Everything is seeded and single-threaded for reproducibility (repeat runs
give the same loss curve). The acoustic and conversion models train with
one-frame-shifted targets (the net's output at step t is scored against the
label/features of frame t-1), matching how the engine releases their outputs
in lookahead mode. The vocoder is trained teacher-forced on mu-law excitation
codes with mild code noise on the previous-output input, which keeps
free-running synthesis from drifting.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import corpus as corpus_mod
from . import frontend
from .models import AcousticModel, ConversionModel, FrameRateNet, SampleRateNet

N_SPEAKERS = len(corpus_mod.SPEAKER_F0)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    fine_tune_rate: float = 0.0001
    acoustic_epochs: int = 12
    conversion_epochs: int = 24
    vocoder_steps: int = 1200
    crop_frames: int = 100
    vocoder_window_frames: int = 3
    vocoder_history_noise: int = 3   # +- mu-law codes on the feedback inputs
    vocoder_voiced_bias: float = 0.8  # fraction of windows anchored on voiced frames
    seed: int = 0
    shifted_targets: bool = True
    f0_augment: float = 0.35  # log-domain F0 transposition range (conversion)
    dense_dims: tuple = (32, 32)
    lstm_dims: tuple = (64, 64)
    conversion_dense: int = 48
    conversion_lstm: tuple = (64, 64)
    conversion_head: int = 48
    frame_conv: int = 48
    cond_dim: int = 128
    embed_dim: int = 64
    gru_dims: tuple = (64, 16)
    head_hidden: int = 64


def _setup(seed: int):
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    return np.random.default_rng(seed)


def prepare(corpus):
    """Cache per-utterance features: mfcc39, vocoder targets, pitch, labels."""
    prepared = []
    for utt in corpus.utterances:
        mfcc39, voc, track = frontend.utterance_features(utt.waveform)
        n = min(len(mfcc39), len(utt.labels))
        prepared.append({
            "utt": utt,
            "mfcc": mfcc39[:n].astype(np.float32),
            "voc": voc[:n].astype(np.float32),
            "track": track[:n],
            "labels": utt.labels[:n],
        })
    return prepared


def _crop(arrays, length, rng):
    n = len(arrays[0])
    start = 0 if n <= length else int(rng.integers(0, n - length + 1))
    out = []
    for a in arrays:
        piece = a[start : start + length]
        if len(piece) < length:
            reps = [piece] + [piece[-1:]] * (length - len(piece))
            piece = np.concatenate(reps, axis=0)
        out.append(piece)
    return out


def _shift_ce_loss(logits, labels, shifted):
    if shifted:
        logits, labels = logits[:, 1:], labels[:, :-1]
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1))


def train_acoustic(prepared, config: TrainConfig):
    """Phoneme classifier on 39-D features; returns (model, loss_history)."""
    rng = _setup(config.seed)
    model = AcousticModel(corpus_mod.N_PHONEMES, config.dense_dims, config.lstm_dims)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = []
    for _ in range(config.acoustic_epochs):
        order = rng.permutation(len(prepared)).repeat(2)
        rng.shuffle(order)
        for i in range(0, len(order) - config.batch_size + 1, config.batch_size):
            batch = [prepared[j] for j in order[i : i + config.batch_size]]
            xs, ys = [], []
            for item in batch:
                x, y = _crop([item["mfcc"], item["labels"]], config.crop_frames, rng)
                xs.append(x)
                ys.append(y)
            x = torch.from_numpy(np.stack(xs))
            y = torch.from_numpy(np.stack(ys))
            _, logits = model(x)
            loss = _shift_ce_loss(logits, y, config.shifted_targets)
            if not torch.isfinite(loss):
                raise RuntimeError("acoustic training diverged (non-finite loss)")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
    return model, history


@torch.no_grad()
def evaluate_acoustic(model, prepared, shifted: bool) -> float:
    """Held-out frame accuracy at the model's own target alignment."""
    correct = total = 0
    for item in prepared:
        x = torch.from_numpy(item["mfcc"][None])
        _, logits = model(x)
        pred = logits.argmax(-1)[0].numpy()
        labels = item["labels"]
        if shifted:
            pred, labels = pred[1:], labels[:-1]
        correct += int((pred == labels).sum())
        total += len(labels)
    return correct / total


def conversion_inputs(item, model_ppg, speaker_index: int, n_speakers: int = N_SPEAKERS):
    """[ppg | encoded F0 | VUF | one-hot] rows for one utterance."""
    n = len(item["mfcc"])
    one_hot = np.zeros((n, n_speakers), dtype=np.float32)
    one_hot[:, speaker_index] = 1.0
    scalars = np.array(
        [[frontend.encode_f0(f0), 1.0 if voiced else 0.0] for f0, voiced, _ in item["track"]],
        dtype=np.float32,
    )
    return np.concatenate([model_ppg, scalars, one_hot], axis=1)


@torch.no_grad()
def acoustic_ppgs(acoustic: AcousticModel, item) -> np.ndarray:
    ppg, _ = acoustic(torch.from_numpy(item["mfcc"][None]))
    return ppg[0].numpy().astype(np.float32)


def train_conversion(prepared, acoustic: AcousticModel, config: TrainConfig):
    """L1 feature-reconstruction training with the frozen acoustic model.

    Each crop gets a random consistent F0 transposition (input F0 encoding and
    target pitch feature shifted together on voiced frames), so the model must
    take its pitch from the F0 input rather than from pitch cues leaking
    through the PPGs - at conversion time the two disagree.
    """
    rng = _setup(config.seed + 1)
    acoustic.eval()
    model = ConversionModel(acoustic.ppg_dim, N_SPEAKERS, config.conversion_dense,
                            config.conversion_lstm, config.conversion_head)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, weight_decay=3e-5)
    ppg_dim = acoustic.ppg_dim
    cached = [
        (conversion_inputs(item, acoustic_ppgs(acoustic, item), item["utt"].speaker_index),
         item["voc"],
         np.array([1.0 if voiced else 0.0 for _, voiced, _ in item["track"]],
                  dtype=np.float32))
        for item in prepared
    ]
    history = []
    for _ in range(config.conversion_epochs):
        order = rng.permutation(len(cached)).repeat(2)
        rng.shuffle(order)
        for i in range(0, len(order) - config.batch_size + 1, config.batch_size):
            us, vs = [], []
            for j in order[i : i + config.batch_size]:
                u, v, voiced = _crop(list(cached[j]), config.crop_frames, rng)
                if config.f0_augment > 0:
                    delta = np.float32(rng.uniform(-config.f0_augment, config.f0_augment))
                    u = u.copy()
                    v = v.copy()
                    u[:, ppg_dim] += delta * voiced
                    v[:, 18] += delta * voiced
                us.append(u)
                vs.append(v)
            u = torch.from_numpy(np.stack(us))
            v = torch.from_numpy(np.stack(vs))
            out = model(u)
            if config.shifted_targets:
                out, v = out[:, 1:], v[:, :-1]
            loss = torch.mean(torch.abs(out - v))
            if not torch.isfinite(loss):
                raise RuntimeError("conversion training diverged (non-finite loss)")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
    return model, history


@torch.no_grad()
def evaluate_conversion(model, acoustic, prepared, shifted: bool = True):
    """(model L1, predict-the-mean baseline L1) on held-out utterances."""
    losses, baselines = [], []
    mean_target = np.mean(np.concatenate([i["voc"] for i in prepared]), axis=0)
    for item in prepared:
        u = conversion_inputs(item, acoustic_ppgs(acoustic, item), item["utt"].speaker_index)
        out = model(torch.from_numpy(u[None]))[0].numpy()
        v = item["voc"]
        if shifted:
            out, v = out[1:], v[:-1]
        losses.append(np.mean(np.abs(out - v)))
        baselines.append(np.mean(np.abs(v - mean_target)))
    return float(np.mean(losses)), float(np.mean(baselines))


def vocoder_codes(prepared):
    """Attach per-sample teacher-forcing code arrays to each utterance."""
    for item in prepared:
        if "codes" not in item:
            item["codes"] = frontend.teacher_forcing_codes(item["utt"].waveform, item["voc"])
            item["voiced_frames"] = np.nonzero(
                [1 if voiced else 0 for _, voiced, _ in item["track"]])[0]
    return prepared


def train_vocoder(prepared, config: TrainConfig, frame_net=None, sample_net=None,
                  lr: float = None):
    """Joint frame-rate + sample-rate training on excitation codes."""
    rng = _setup(config.seed + 2)
    vocoder_codes(prepared)
    frame_net = frame_net or FrameRateNet(config.frame_conv, config.cond_dim)
    sample_net = sample_net or SampleRateNet(config.cond_dim, config.embed_dim,
                                             config.gru_dims[0], config.gru_dims[1],
                                             config.head_hidden)
    opt = torch.optim.Adam(list(frame_net.parameters()) + list(sample_net.parameters()),
                           lr=lr or config.learning_rate)
    hop = frontend.HOP
    window = config.vocoder_window_frames
    noise_span = config.vocoder_history_noise
    history = []
    for _ in range(config.vocoder_steps):
        picks = rng.integers(0, len(prepared), 8)
        conds, prev_outs, prev_excs, preds, targets = [], [], [], [], []
        for utt_idx in picks:
            item = prepared[utt_idx]
            feats = torch.from_numpy(item["voc"][None])
            cond_frames = frame_net(feats)[0]
            n_frames = len(item["voc"])
            voiced_frames = item["voiced_frames"]
            for _ in range(config.batch_size // 8):
                k_max = max(1, n_frames - window)
                if len(voiced_frames) and rng.random() < config.vocoder_voiced_bias:
                    k = int(voiced_frames[rng.integers(0, len(voiced_frames))])
                    k = min(k, k_max - 1)
                else:
                    k = int(rng.integers(0, k_max))
                s0, s1 = k * hop, (k + window) * hop
                cond = cond_frames[k : k + window].repeat_interleave(hop, dim=0)
                po, pe, pr, tg = (arr[s0:s1] for arr in item["codes"])
                # feedback-history noise: the net cannot trust its own echo
                conds.append(cond)
                prev_outs.append(np.clip(po + rng.integers(-noise_span, noise_span + 1,
                                                           len(po)), 0, 255))
                prev_excs.append(np.clip(pe + rng.integers(-noise_span, noise_span + 1,
                                                           len(pe)), 0, 255))
                preds.append(pr)
                targets.append(tg)
        cond = torch.stack(conds)
        logits, _ = sample_net(
            cond,
            torch.from_numpy(np.stack(prev_outs)),
            torch.from_numpy(np.stack(prev_excs)),
            torch.from_numpy(np.stack(preds)),
        )
        target = torch.from_numpy(np.stack(targets))
        loss = F.cross_entropy(logits.reshape(-1, 256), target.reshape(-1))
        if not torch.isfinite(loss):
            raise RuntimeError("vocoder training diverged (non-finite loss)")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    return frame_net, sample_net, history


def fine_tune(conversion, frame_net, sample_net, acoustic, prepared_target,
              config: TrainConfig):
    """Continue conversion+vocoder training on one speaker at the reduced rate.

    The acoustic model is left untouched. Returns the updated models.
    """
    _setup(config.seed + 3)
    ft = TrainConfig(**{**config.__dict__,
                        "learning_rate": config.fine_tune_rate,
                        "conversion_epochs": max(2, config.conversion_epochs // 3),
                        "vocoder_steps": max(50, config.vocoder_steps // 5)})
    rng = np.random.default_rng(config.seed + 3)
    acoustic.eval()
    opt = torch.optim.Adam(conversion.parameters(), lr=ft.learning_rate)
    cached = [
        (conversion_inputs(item, acoustic_ppgs(acoustic, item), item["utt"].speaker_index),
         item["voc"])
        for item in prepared_target
    ]
    for _ in range(ft.conversion_epochs):
        order = rng.permutation(len(cached)).repeat(4)
        rng.shuffle(order)
        for i in range(0, len(order) - ft.batch_size + 1, ft.batch_size):
            us, vs = [], []
            for j in order[i : i + ft.batch_size]:
                u, v = _crop(list(cached[j]), ft.crop_frames, rng)
                us.append(u)
                vs.append(v)
            out = conversion(torch.from_numpy(np.stack(us)))
            v = torch.from_numpy(np.stack(vs))
            loss = torch.mean(torch.abs(out[:, 1:] - v[:, :-1]))
            opt.zero_grad()
            loss.backward()
            opt.step()
    frame_net, sample_net, _ = train_vocoder(prepared_target, ft, frame_net, sample_net,
                                             lr=ft.fine_tune_rate)
    return conversion, frame_net, sample_net
