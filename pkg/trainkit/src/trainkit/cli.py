"""Trainkit command line: train, finetune, export, parity.

`train` builds the synthetic corpus, trains the three models, writes a torch
checkpoint, the speaker registry and an engine bundle, and verifies parity.
`finetune` continues training from an engine bundle for one target speaker.
`export` re-exports a checkpoint (optionally with deliberately swapped LSTM
gates, as a negative control for the parity harness). `parity` checks a
bundle against a checkpoint's forward passes via the engine subprocess.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from . import export as export_mod
from . import training
from .models import AcousticModel, ConversionModel, FrameRateNet, SampleRateNet


def save_checkpoint(path, config, acoustic, conversion, frame_net, sample_net):
    torch.save({
        "config": dataclasses.asdict(config),
        "acoustic": acoustic.state_dict(),
        "conversion": conversion.state_dict(),
        "frame_rate": frame_net.state_dict(),
        "sample_rate": sample_net.state_dict(),
        "dims": {
            "n_phonemes": acoustic.classifier.out_dim,
            "ppg_dim": acoustic.ppg_dim,
            "n_speakers": conversion.n_speakers,
        },
    }, path)


def load_checkpoint(path):
    blob = torch.load(path, weights_only=False)
    config = training.TrainConfig(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in blob["config"].items()})
    acoustic = AcousticModel(blob["dims"]["n_phonemes"], config.dense_dims, config.lstm_dims)
    conversion = ConversionModel(blob["dims"]["ppg_dim"], blob["dims"]["n_speakers"],
                                 config.conversion_dense, config.conversion_lstm,
                                 config.conversion_head)
    frame_net = FrameRateNet(config.frame_conv, config.cond_dim)
    sample_net = SampleRateNet(config.cond_dim, config.embed_dim,
                               config.gru_dims[0], config.gru_dims[1], config.head_hidden)
    acoustic.load_state_dict(blob["acoustic"])
    conversion.load_state_dict(blob["conversion"])
    frame_net.load_state_dict(blob["frame_rate"])
    sample_net.load_state_dict(blob["sample_rate"])
    return config, acoustic, conversion, frame_net, sample_net


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = training.TrainConfig(seed=args.seed)
    if args.quick:
        config = dataclasses.replace(config, acoustic_epochs=4, conversion_epochs=4,
                                     vocoder_steps=120)
    if args.vocoder_steps:
        config = dataclasses.replace(config, vocoder_steps=args.vocoder_steps)

    train_corpus = corpus_mod.make_corpus(args.utterances_per_speaker, seed=config.seed)
    heldout = corpus_mod.make_corpus(max(2, args.utterances_per_speaker // 5),
                                     seed=config.seed + 9000)
    print("preparing features...", file=sys.stderr)
    prepared = training.prepare(train_corpus)
    prepared_heldout = training.prepare(heldout)

    print("training acoustic model...", file=sys.stderr)
    acoustic, _ = training.train_acoustic(prepared, config)
    accuracy = training.evaluate_acoustic(acoustic, prepared_heldout, config.shifted_targets)
    print(f"held-out frame accuracy: {accuracy:.3f}", file=sys.stderr)

    print("training conversion model...", file=sys.stderr)
    conversion, _ = training.train_conversion(prepared, acoustic, config)
    l1, baseline = training.evaluate_conversion(conversion, acoustic, prepared_heldout)
    print(f"held-out feature L1: {l1:.4f} (mean-predictor baseline {baseline:.4f})",
          file=sys.stderr)

    print("training vocoder...", file=sys.stderr)
    # widen pitch coverage so the conditioning generalizes across mapped F0
    aug_corpus = corpus_mod.make_corpus(max(4, args.utterances_per_speaker // 2),
                                        seed=config.seed + 77, f0_range=(95, 320))
    prepared_vocoder = prepared + training.prepare(aug_corpus)
    frame_net, sample_net, vocoder_history = training.train_vocoder(prepared_vocoder, config)
    print(f"final teacher-forced CE: {np.mean(vocoder_history[-20:]):.3f} "
          f"(uniform baseline {np.log(256):.3f})", file=sys.stderr)

    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(ckpt, config, acoustic, conversion, frame_net, sample_net)

    registry = corpus_mod.speaker_registry_rows(train_corpus)
    (out_dir / "speakers.tsv").write_text(corpus_mod.format_registry(registry))

    bundle_path = out_dir / "bundle.svx"
    export_mod.write_bundle(
        export_mod.bundle_layers(acoustic, conversion, frame_net, sample_net), bundle_path)
    report = export_mod.check_parity(bundle_path, acoustic, conversion, frame_net,
                                     sample_net, seed=config.seed)
    print(json.dumps({
        "heldout_accuracy": accuracy,
        "heldout_l1": l1,
        "mean_baseline_l1": baseline,
        "vocoder_ce": float(np.mean(vocoder_history[-20:])),
        "parity_max_abs_diff": report,
        "bundle": str(bundle_path),
        "speakers": str(out_dir / "speakers.tsv"),
        "checkpoint": str(ckpt),
    }))
    return 0


def cmd_finetune(args) -> int:
    acoustic, conversion, frame_net, sample_net = export_mod.models_from_bundle(args.bundle)
    acoustic_bytes_before = export_mod.read_bundle(args.bundle)["acoustic"]
    config = training.TrainConfig(seed=args.seed)
    target = corpus_mod.make_corpus(args.utterances, seed=args.seed + 500,
                                    speakers=[args.speaker])
    prepared = training.prepare(target)
    conversion, frame_net, sample_net = training.fine_tune(
        conversion, frame_net, sample_net, acoustic, prepared, config)
    models = export_mod.bundle_layers(acoustic, conversion, frame_net, sample_net)
    export_mod.write_bundle(models, args.out)
    # the acoustic fragment must be byte-identical
    after = export_mod.read_bundle(args.out)["acoustic"]
    unchanged = all(
        np.array_equal(a["tensors"][i], b["tensors"][i])
        for a, b in zip(acoustic_bytes_before, after) for i in range(2))
    print(json.dumps({"out": str(args.out), "acoustic_unchanged": unchanged}))
    return 0 if unchanged else 1


def cmd_export(args) -> int:
    _, acoustic, conversion, frame_net, sample_net = load_checkpoint(args.checkpoint)
    models = export_mod.bundle_layers(acoustic, conversion, frame_net, sample_net,
                                      swap_lstm_gates=args.swap_lstm_gates)
    export_mod.write_bundle(models, args.out)
    print(json.dumps({"out": str(args.out), "models": list(models)}))
    return 0


def cmd_parity(args) -> int:
    _, acoustic, conversion, frame_net, sample_net = load_checkpoint(args.checkpoint)
    try:
        report = export_mod.check_parity(args.bundle, acoustic, conversion,
                                         frame_net, sample_net, seed=args.seed)
    except RuntimeError as err:
        print(f"trainkit: {err}", file=sys.stderr)
        return 1
    print(json.dumps({"parity_max_abs_diff": report, "tolerance": export_mod.PARITY_TOLERANCE}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="trainkit",
                                     description="Toy-scale training/export for streamvox")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train all three models and export a bundle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utterances-per-speaker", type=int, default=12)
    p.add_argument("--vocoder-steps", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="shorter schedules for smoke runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a bundle for one target speaker")
    p.add_argument("--bundle", required=True)
    p.add_argument("--speaker", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utterances", type=int, default=8)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("export", help="export a checkpoint as an engine bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--swap-lstm-gates", action="store_true",
                   help="deliberately corrupt gate order (parity negative control)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("parity", help="compare a bundle against trainkit forward passes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_parity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
