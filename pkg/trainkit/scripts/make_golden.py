"""Generate the golden feature vectors with the engine.

Run once and commit the outputs; trainkit's front-end tests compare its own
feature implementations against these files (tolerance 1e-5).
"""

from pathlib import Path

import numpy as np
from streamvox import dsp, wavio
from streamvox.cli import main

GOLDEN = Path(__file__).parent.parent / "tests" / "golden"


def golden_signal():
    rng = np.random.default_rng(2024)
    t = np.arange(12800) / 16000
    sig = np.zeros_like(t)
    voiced = sum(np.sin(2 * np.pi * k * 135.0 * t + rng.uniform(0, 6)) / k
                 for k in range(1, 10))
    sig[:6400] = 0.35 * (voiced[:6400] / np.max(np.abs(voiced)))
    sig[6400:9600] = rng.normal(0, 1e-4, 3200)          # near-silence
    sig[9600:] = rng.uniform(-0.2, 0.2, 3200)           # noise burst
    return np.clip(sig, -1, 1)


def main_():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    wav = GOLDEN / "golden_in.wav"
    wavio.write_wav(wav, dsp.AudioBuffer(golden_signal()))
    assert main(["features", str(wav), "--out", str(GOLDEN / "golden_features.csv")]) == 0

    codes = np.arange(256)
    decoded = dsp.mulaw_decode(codes)
    rng = np.random.default_rng(7)
    xs = rng.uniform(-1, 1, 200)
    with open(GOLDEN / "golden_mulaw.csv", "w") as fh:
        fh.write("kind,value,code,decoded\n")
        for c, d in zip(codes, decoded):
            fh.write(f"table,{c},{c},{d:.12g}\n")
        for x in xs:
            c = dsp.mulaw_encode(x)
            fh.write(f"encode,{x:.12g},{c},{dsp.mulaw_decode(c):.12g}\n")
    print("golden vectors written to", GOLDEN)


if __name__ == "__main__":
    main_()
