"""Torch models whose parameters are laid out exactly like the engine's.

Recurrent cells keep one packed weight per layer, (in+out, n_gates*out),
with the engine's gate order (LSTM i|f|g|o, GRU z|r|cand where the candidate
sees [x, r*h]) and a single bias vector, so export is a plain tensor copy.
"""

import math

import numpy as np
import torch
from torch import nn


def _packed_init(in_dim, out_dim, gates):
    w = torch.randn(in_dim + out_dim, gates * out_dim) / math.sqrt(in_dim + out_dim)
    return nn.Parameter(w)


class Dense(nn.Module):
    def __init__(self, in_dim, out_dim, activation="linear"):
        super().__init__()
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim) / math.sqrt(in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))

    def forward(self, x):
        y = x @ self.weight.T + self.bias
        if self.activation == "relu":
            return torch.relu(y)
        if self.activation == "tanh":
            return torch.tanh(y)
        return y


class PackedLSTM(nn.Module):
    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = _packed_init(in_dim, out_dim, 4)
        bias = torch.zeros(4 * out_dim)
        bias[out_dim : 2 * out_dim] = 1.0  # forget-gate bias
        self.bias = nn.Parameter(bias)

    def forward(self, x_seq, state=None):
        batch, steps, _ = x_seq.shape
        n = self.out_dim
        if state is None:
            h = x_seq.new_zeros(batch, n)
            c = x_seq.new_zeros(batch, n)
        else:
            h, c = state
        outs = []
        for t in range(steps):
            z = torch.cat([x_seq[:, t], h], dim=1) @ self.weight + self.bias
            i, f, g, o = z[:, :n], z[:, n : 2 * n], z[:, 2 * n : 3 * n], z[:, 3 * n :]
            c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
            h = torch.sigmoid(o) * torch.tanh(c)
            outs.append(h)
        return torch.stack(outs, dim=1), (h, c)


class PackedGRU(nn.Module):
    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = _packed_init(in_dim, out_dim, 3)
        self.bias = nn.Parameter(torch.zeros(3 * out_dim))

    def step(self, x, h):
        n = self.out_dim
        zr = torch.cat([x, h], dim=1) @ self.weight[:, : 2 * n] + self.bias[: 2 * n]
        z = torch.sigmoid(zr[:, :n])
        r = torch.sigmoid(zr[:, n:])
        cand = torch.tanh(
            torch.cat([x, r * h], dim=1) @ self.weight[:, 2 * n :] + self.bias[2 * n :])
        return (1.0 - z) * h + z * cand

    def forward(self, x_seq, h=None):
        batch, steps, _ = x_seq.shape
        if h is None:
            h = x_seq.new_zeros(batch, self.out_dim)
        outs = []
        for t in range(steps):
            h = self.step(x_seq[:, t], h)
            outs.append(h)
        return torch.stack(outs, dim=1), h


class EdgeConv(nn.Module):
    """Width-3 convolution over frames with edge replication."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = nn.Parameter(torch.randn(3, in_dim, out_dim) / math.sqrt(3 * in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))

    def forward(self, x_seq):
        padded = torch.cat([x_seq[:, :1], x_seq, x_seq[:, -1:]], dim=1)
        acc = self.bias + padded[:, :-2] @ self.weight[0] \
            + padded[:, 1:-1] @ self.weight[1] + padded[:, 2:] @ self.weight[2]
        return torch.tanh(acc)


class AcousticModel(nn.Module):
    """Phoneme classifier; PPGs are the second LSTM's output."""

    def __init__(self, n_phonemes=5, dense=(32, 32), lstm=(64, 64)):
        super().__init__()
        self.fc1 = Dense(39, dense[0], "relu")
        self.fc2 = Dense(dense[0], dense[1], "relu")
        self.lstm1 = PackedLSTM(dense[1], lstm[0])
        self.lstm2 = PackedLSTM(lstm[0], lstm[1])
        self.classifier = Dense(lstm[1], n_phonemes, "linear")
        self.ppg_dim = lstm[1]

    def forward(self, mfcc39):
        h = self.fc2(self.fc1(mfcc39))
        h, _ = self.lstm1(h)
        ppg, _ = self.lstm2(h)
        return ppg, self.classifier(ppg)


class ConversionModel(nn.Module):
    """PPG + encoded F0 + VUF + speaker one-hot -> 20-D vocoder features."""

    def __init__(self, ppg_dim=64, n_speakers=4, dense=48, lstm=(64, 64), head=48):
        super().__init__()
        self.in_dim = ppg_dim + 2 + n_speakers
        self.n_speakers = n_speakers
        self.fc_in = Dense(self.in_dim, dense, "relu")
        self.lstm1 = PackedLSTM(dense, lstm[0])
        self.lstm2 = PackedLSTM(lstm[0], lstm[1])
        self.fc_mid = Dense(lstm[1], head, "relu")
        self.fc_out = Dense(head, 20, "linear")

    def forward(self, u):
        h = self.fc_in(u)
        h, _ = self.lstm1(h)
        h, _ = self.lstm2(h)
        return self.fc_out(self.fc_mid(h))


class FrameRateNet(nn.Module):
    def __init__(self, conv=48, cond=128):
        super().__init__()
        self.conv1 = EdgeConv(20, conv)
        self.conv2 = EdgeConv(conv, conv)
        self.fc1 = Dense(conv, cond, "tanh")
        self.fc2 = Dense(cond, cond, "tanh")
        self.cond_dim = cond

    def forward(self, features):
        return self.fc2(self.fc1(self.conv2(self.conv1(features))))


class SampleRateNet(nn.Module):
    """Teacher-forced excitation-code predictor."""

    def __init__(self, cond=128, embed=64, gru_a=64, gru_b=16, head=64):
        super().__init__()
        self.embed_dim = embed
        self.embed_output = nn.Parameter(torch.randn(256, embed) * 0.1)
        self.embed_excitation = nn.Parameter(torch.randn(256, embed) * 0.1)
        self.embed_predicted = nn.Parameter(torch.randn(256, embed) * 0.1)
        self.gru_a = PackedGRU(cond + 3 * embed, gru_a)
        self.gru_b = PackedGRU(gru_a + cond, gru_b)
        self.fc1 = Dense(gru_b, head, "tanh")
        self.fc2 = Dense(head, 256, "linear")

    def forward(self, cond, prev_out, prev_exc, pred, states=None):
        """cond (B,S,C); the three code tensors (B,S) int64. Returns (B,S,256).

        The input-side contributions of both GRUs are batched over all steps
        up front; only the recurrent half runs sequentially.
        """
        batch, steps, _ = cond.shape
        n_a, n_b = self.gru_a.out_dim, self.gru_b.out_dim
        if states is None:
            h_a = cond.new_zeros(batch, n_a)
            h_b = cond.new_zeros(batch, n_b)
        else:
            h_a, h_b = states
        x = torch.cat([cond, self.embed_output[prev_out],
                       self.embed_excitation[prev_exc],
                       self.embed_predicted[pred]], dim=-1)
        xa_all = x @ self.gru_a.weight[: self.gru_a.in_dim] + self.gru_a.bias
        xb_cond = cond @ self.gru_b.weight[n_a : self.gru_b.in_dim] + self.gru_b.bias
        wa_h = self.gru_a.weight[self.gru_a.in_dim :]
        wb_in = self.gru_b.weight[:n_a]
        wb_h = self.gru_b.weight[self.gru_b.in_dim :]
        hs = []
        for t in range(steps):
            xa = xa_all[:, t]
            zr = torch.sigmoid(xa[:, : 2 * n_a] + h_a @ wa_h[:, : 2 * n_a])
            z, r = zr[:, :n_a], zr[:, n_a:]
            cand = torch.tanh(xa[:, 2 * n_a :] + (r * h_a) @ wa_h[:, 2 * n_a :])
            h_a = (1.0 - z) * h_a + z * cand

            xb = xb_cond[:, t] + h_a @ wb_in
            zrb = torch.sigmoid(xb[:, : 2 * n_b] + h_b @ wb_h[:, : 2 * n_b])
            zb, rb = zrb[:, :n_b], zrb[:, n_b:]
            cand_b = torch.tanh(xb[:, 2 * n_b :] + (rb * h_b) @ wb_h[:, 2 * n_b :])
            h_b = (1.0 - zb) * h_b + zb * cand_b
            hs.append(h_b)
        logits = self.fc2(self.fc1(torch.stack(hs, dim=1)))
        return logits, (h_a, h_b)


def numpy_params(module: nn.Module) -> dict:
    """Detached float32 copies of every parameter, keyed by name."""
    return {name: p.detach().cpu().numpy().astype(np.float32)
            for name, p in module.named_parameters()}
