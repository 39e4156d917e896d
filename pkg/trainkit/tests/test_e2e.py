"""Fine-tuning and the end-to-end toy conversion demo through the engine CLI."""

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import torch

from trainkit import corpus, export, frontend, training


def engine(*argv, **kwargs):
    return subprocess.run([sys.executable, "-m", "streamvox.cli", *argv],
                          capture_output=True, text=True, **kwargs)


def write_wav(path, samples):
    import struct
    import wave

    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        pcm = np.clip(np.asarray(samples), -1, 1)
        w.writeframes((np.rint(pcm * 32767)).astype("<i2").tobytes())


def read_wav(path):
    import wave

    with wave.open(str(path), "rb") as w:
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


@pytest.fixture(scope="module")
def exported(trained_stack):
    out = trained_stack["dir"]
    bundle = out / "bundle.svx"
    export.write_bundle(export.bundle_layers(
        trained_stack["acoustic"], trained_stack["conversion"],
        trained_stack["frame_net"], trained_stack["sample_net"]), bundle)
    registry = out / "speakers.tsv"
    registry.write_text(corpus.format_registry(
        corpus.speaker_registry_rows(trained_stack["corpus"])))
    return {"bundle": bundle, "registry": registry, "dir": out}


class TestFineTune:
    def test_finetune_does_not_hurt_and_keeps_acoustic(self, trained_stack, exported):
        target_corpus = corpus.make_corpus(6, seed=4242, speakers=["spk2"])
        prepared_target = training.prepare(target_corpus)
        heldout_target = training.prepare(
            corpus.make_corpus(3, seed=5252, speakers=["spk2"]))
        acoustic = trained_stack["acoustic"]
        before_l1, _ = training.evaluate_conversion(
            trained_stack["conversion"], acoustic, heldout_target)
        acoustic_bytes = [p.detach().clone() for p in acoustic.parameters()]

        import copy
        conv = copy.deepcopy(trained_stack["conversion"])
        fnet = copy.deepcopy(trained_stack["frame_net"])
        snet = copy.deepcopy(trained_stack["sample_net"])
        conv, fnet, snet = training.fine_tune(conv, fnet, snet, acoustic,
                                              prepared_target, trained_stack["config"])
        after_l1, _ = training.evaluate_conversion(conv, acoustic, heldout_target)
        print(f"SECONDARY ACCEPTANCE: fine-tune target-speaker L1 "
              f"{before_l1:.4f} -> {after_l1:.4f} (must not increase)")
        assert after_l1 <= before_l1 + 1e-6
        for before, param in zip(acoustic_bytes, acoustic.parameters()):
            assert torch.equal(before, param)  # acoustic fragment untouched

    def test_finetuned_export_acoustic_bytes_unchanged(self, trained_stack, exported):
        raw_before = export.read_bundle(exported["bundle"])["acoustic"]
        import copy
        conv = copy.deepcopy(trained_stack["conversion"])
        with torch.no_grad():
            for p in conv.parameters():
                p += 0.01  # stand-in for fine-tuning updates
        path = exported["dir"] / "finetuned.svx"
        export.write_bundle(export.bundle_layers(
            trained_stack["acoustic"], conv, trained_stack["frame_net"],
            trained_stack["sample_net"]), path)
        raw_after = export.read_bundle(path)["acoustic"]
        for a, b in zip(raw_before, raw_after):
            assert a["tensors"][0].tobytes() == b["tensors"][0].tobytes()
            assert a["tensors"][1].tobytes() == b["tensors"][1].tobytes()
        # parameter count unchanged by fine-tuning
        count = lambda layers: sum(t.size for l in layers for t in l["tensors"])
        assert count(raw_before) == count(raw_after)


class TestEndToEndDemo:
    def test_convert_between_synthetic_speakers(self, exported):
        rng = np.random.default_rng(321)
        utt = corpus.make_utterance("spk1", rng, n_segments=6)
        src_wav = exported["dir"] / "demo_in.wav"
        out_wav = exported["dir"] / "demo_out.wav"
        write_wav(src_wav, utt.waveform)

        proc = engine("convert", str(src_wav), str(out_wav),
                      "--bundle", str(exported["bundle"]),
                      "--speakers", str(exported["registry"]),
                      "--source", "spk1", "--target", "spk2", "--seed", "5")
        assert proc.returncode == 0, proc.stderr

        out = read_wav(out_wav)
        in_track = frontend.track_pitch(utt.waveform)
        out_track = frontend.track_pitch(out)
        n = min(len(in_track), len(out_track))
        in_voiced = np.array([v for _, v, _ in in_track[:n]])
        out_voiced = np.array([v for _, v, _ in out_track[:n]])
        agreement = float(np.mean(in_voiced == out_voiced))

        registry = {}
        for line in exported["registry"].read_text().splitlines():
            sid, _, mean, std = line.split("\t")
            registry[sid] = (float(mean), float(std))
        src_m, src_s = registry["spk1"]
        tgt_m, tgt_s = registry["spk2"]
        mapped = [math.exp(tgt_m + (math.log(f) - src_m) * tgt_s / src_s)
                  for f, v, _ in in_track[:n] if v]
        out_f0 = [f for f, v, _ in out_track[:n] if v]
        assert out_f0, "no voiced frames in converted output"
        target_median = float(np.median(mapped))
        out_median = float(np.median(out_f0))
        rel_err = abs(out_median - target_median) / target_median
        print(f"SECONDARY ACCEPTANCE: e2e demo voicing agreement {agreement:.2f} (>= 0.80); "
              f"output F0 median {out_median:.1f} vs mapped {target_median:.1f} "
              f"({100 * rel_err:.1f}% err, <= 10%)")
        assert agreement >= 0.80
        assert rel_err <= 0.10
