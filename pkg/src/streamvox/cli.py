"""Operator-facing command line tool.

Subcommands: convert (wav -> wav), stream (raw PCM stdin -> stdout), latency
(budget table), bench (synthesis real-time factor), features (CSV dump) and
eval (raw model forward passes for cross-implementation parity checks).

Exit codes: 0 success, 2 bad arguments, 3 I/O problems, 4 model/validation
errors. Diagnostics go to stderr; payload data to stdout or files.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import dsp, nn, pipeline, pitch, wavio
from .errors import StreamvoxError
from .wavio import WavFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4

STREAM_CHUNK_SAMPLES = 4 * dsp.FrameGeometry().hop_samples  # bounded hand-off buffer


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise _CliError(code, message)


def _load_bundle(path) -> nn.ModelBundle:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as err:
        _fail(EXIT_IO, f"cannot read bundle: {err}")
    try:
        return nn.load_bundle(data)
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"invalid bundle {path}: {err}")


def _load_speakers(path, *ids) -> list[pitch.SpeakerProfile]:
    try:
        registry = pitch.load_registry(path)
    except OSError as err:
        _fail(EXIT_IO, f"cannot read speaker registry: {err}")
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"invalid speaker registry {path}: {err}")
    profiles = []
    for speaker in ids:
        if speaker not in registry:
            _fail(EXIT_USAGE,
                  f"unknown speaker {speaker!r}; known speakers: {', '.join(sorted(registry))}")
        profiles.append(registry[speaker])
    return profiles


def _run_report(session: pipeline.ConversionSession, wall: float, n_samples: int) -> dict:
    audio_seconds = n_samples / dsp.SAMPLE_RATE
    return {
        "rtf": wall / audio_seconds if audio_seconds else float("inf"),
        "audio_seconds": audio_seconds,
        "wall_seconds": wall,
        "stage_seconds": dict(session.stage_seconds),
        "frames": session.frames_processed,
        "mode": session.mode,
        "latency_ms": pipeline.latency_of(pipeline.budget_for_mode(session.mode)),
    }


def cmd_convert(args) -> int:
    bundle = _load_bundle(args.bundle)
    src, tgt = _load_speakers(args.speakers, args.source, args.target)
    try:
        audio = wavio.read_wav(args.input)
    except WavFormatError as err:
        _fail(EXIT_IO, str(err))
    except OSError as err:
        _fail(EXIT_IO, f"cannot read {args.input}: {err}")
    try:
        session = pipeline.ConversionSession(bundle, src, tgt, args.mode, args.seed)
        t0 = time.perf_counter()
        out = np.concatenate([session.push(audio.samples), session.flush()])
        wall = time.perf_counter() - t0
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"conversion failed: {err}")
    try:
        wavio.write_wav(args.output, dsp.AudioBuffer(out))
    except OSError as err:
        _fail(EXIT_IO, f"cannot write {args.output}: {err}")
    print(json.dumps(_run_report(session, wall, len(audio))), file=sys.stderr)
    return EXIT_OK


def cmd_stream(args) -> int:
    bundle = _load_bundle(args.bundle)
    src, tgt = _load_speakers(args.speakers, args.source, args.target)
    try:
        session = pipeline.ConversionSession(bundle, src, tgt, args.mode, args.seed)
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"cannot start session: {err}")
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    pending = b""
    got_any = False
    try:
        while True:
            # read1 returns as soon as any input is available (read would
            # block for the full count and stall the stream)
            chunk = stdin.read1(2 * STREAM_CHUNK_SAMPLES)
            if not chunk:
                break
            got_any = True
            pending += chunk
            usable = len(pending) - (len(pending) % 2)
            out = session.push(wavio.pcm16_to_float(pending[:usable]))
            pending = pending[usable:]
            if out.size:
                stdout.write(wavio.float_to_pcm16(out))
                stdout.flush()
        if got_any:
            out = session.flush()
            if out.size:
                stdout.write(wavio.float_to_pcm16(out))
        stdout.flush()
    except BrokenPipeError:
        return EXIT_OK
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"stream conversion failed: {err}")
    return EXIT_OK


def cmd_latency(args) -> int:
    budget = pipeline.budget_for_mode(args.mode)
    rows = [
        ("framing", (budget.frame_len_ms + budget.hop_ms) / 2.0),
        ("acoustic", budget.acoustic_lookahead_frames * budget.hop_ms),
        ("conversion", budget.conversion_lookahead_frames * budget.hop_ms),
        ("vocoder", budget.vocoder_lookahead_frames * budget.hop_ms),
    ]
    for name, ms in rows:
        print(f"{name:<12} {ms:>6.1f} ms")
    print(f"{'total':<12} {pipeline.latency_of(budget):>6.1f} ms")
    return EXIT_OK


def cmd_bench(args) -> int:
    bundle = _load_bundle(args.bundle)
    try:
        bundle.require(nn.FRAME_RATE, nn.SAMPLE_RATE)
    except StreamvoxError as err:
        _fail(EXIT_MODEL, str(err))
    rng = np.random.default_rng(args.seed)
    n_frames = int(round(args.seconds * 1000 / dsp.FrameGeometry().hop_ms))
    features = np.empty((n_frames, 20), dtype=np.float32)
    features[:, :18] = rng.normal(0.0, 1.0, (n_frames, 18))
    features[:, 0] -= 4.0
    features[:, 18] = rng.uniform(-0.3, 0.8, n_frames)
    features[:, 19] = rng.uniform(0.0, 1.0, n_frames)

    stage = {}
    t0 = time.perf_counter()
    t = time.perf_counter()
    conds = pipeline.frame_rate_forward(features, bundle)
    stage["frame_rate"] = time.perf_counter() - t
    t = time.perf_counter()
    cell = pipeline.SampleRateCell(bundle)
    state = pipeline.SampleRateState(bundle)
    sample_rng = np.random.default_rng(args.seed)
    for i in range(n_frames):
        pipeline._synthesize_frame(cell, state, features[i], conds[i], sample_rng, i)
    stage["vocoder"] = time.perf_counter() - t
    wall = time.perf_counter() - t0

    audio_seconds = n_frames * dsp.FrameGeometry().hop_ms / 1000
    report = {
        "rtf": wall / audio_seconds,
        "audio_seconds": audio_seconds,
        "wall_seconds": wall,
        "stage_seconds": stage,
        "frames": n_frames,
        "mode": args.mode,
        "latency_ms": pipeline.latency_of(pipeline.budget_for_mode(args.mode)),
        "threads": 1,
    }
    print(json.dumps(report))
    return EXIT_OK


def cmd_features(args) -> int:
    try:
        audio = wavio.read_wav(args.input)
    except WavFormatError as err:
        _fail(EXIT_IO, str(err))
    except OSError as err:
        _fail(EXIT_IO, f"cannot read {args.input}: {err}")
    try:
        mfcc39, voc = pipeline.analysis_features(audio)
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"feature extraction failed: {err}")
    header = (
        [f"mfcc_{i:02d}" for i in range(13)]
        + [f"delta_{i:02d}" for i in range(13)]
        + [f"delta2_{i:02d}" for i in range(13)]
        + [f"bark_{i:02d}" for i in range(18)]
        + ["pitch", "pitch_corr"]
    )
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in np.hstack([mfcc39, voc]):
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
    except OSError as err:
        _fail(EXIT_IO, f"cannot write {args.out}: {err}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """Raw forward passes on saved arrays; the parity surface for trainkit."""
    bundle = _load_bundle(args.bundle)
    try:
        data = np.load(args.input)
    except OSError as err:
        _fail(EXIT_IO, f"cannot read {args.input}: {err}")
    try:
        if args.model == "acoustic":
            out = pipeline.acoustic_forward(np.asarray(data), bundle)
        elif args.model == "classifier":
            out = pipeline.classify_phonemes(np.asarray(data), bundle)
        elif args.model == "conversion":
            layers = bundle[nn.CONVERSION]
            state = nn.RecurrentState(layers)
            out = np.array([pipeline._conversion_step(layers, state, row.astype(np.float32))
                            for row in np.asarray(data)])
        elif args.model == "frame_rate":
            out = pipeline.frame_rate_forward(np.asarray(data), bundle)
        else:  # sample_rate: teacher-forced logits from cond + the 3 input codes
            cond = np.asarray(data["cond"], dtype=np.float32)
            codes = np.asarray(data["codes"], dtype=np.int64)
            cell = pipeline.SampleRateCell(bundle)
            state = pipeline.SampleRateState(bundle)
            rows = []
            for t in range(len(cond)):
                offsets = cell.frame_setup(cond[t])
                rows.append(cell.logits(offsets, state, int(codes[t, 0]),
                                        int(codes[t, 1]), int(codes[t, 2])))
            out = np.array(rows)
    except StreamvoxError as err:
        _fail(EXIT_MODEL, f"forward pass failed: {err}")
    try:
        np.save(args.output, out.astype(np.float32))
    except OSError as err:
        _fail(EXIT_IO, f"cannot write {args.output}: {err}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamvox",
                                     description="Streaming low-latency voice conversion")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p):
        p.add_argument("--bundle", required=True, help="weight bundle file")
        p.add_argument("--speakers", required=True, help="speaker registry file")
        p.add_argument("--source", required=True, help="source speaker id")
        p.add_argument("--target", required=True, help="target speaker id")
        p.add_argument("--mode", choices=pipeline.MODES, default="lookahead")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("convert", help="convert a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    add_model_args(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stream", help="convert raw 16-bit PCM from stdin to stdout")
    add_model_args(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("latency", help="print the look-ahead budget")
    p.add_argument("--mode", choices=pipeline.MODES, default="lookahead")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("bench", help="measure the synthesis real-time factor")
    p.add_argument("--bundle", required=True)
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=pipeline.MODES, default="lookahead")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("features", help="dump per-frame analysis features as CSV")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("eval", help="raw model forward pass on a saved array (parity checks)")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", required=True,
                   choices=["acoustic", "classifier", "conversion", "frame_rate", "sample_rate"])
    p.add_argument("--input", required=True, help=".npy input (.npz for sample_rate)")
    p.add_argument("--output", required=True, help=".npy output path")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as err:
        print(f"streamvox: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
