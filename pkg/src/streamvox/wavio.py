"""Strict 16-bit mono 16 kHz RIFF/WAVE reading and writing."""

import wave

import numpy as np

from . import dsp
from .errors import StreamvoxError


class WavFormatError(StreamvoxError):
    """The file is not PCM 16-bit mono 16 kHz; the message names the field."""


def pcm16_to_float(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def float_to_pcm16(samples: np.ndarray) -> bytes:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return (np.rint(clipped * 32767.0).astype("<i2")).tobytes()


def read_wav(path) -> dsp.AudioBuffer:
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise WavFormatError(
                    f"{path}: compression {wav.getcomptype()!r} not supported (need PCM)")
            if wav.getnchannels() != 1:
                raise WavFormatError(f"{path}: {wav.getnchannels()} channels (need mono)")
            if wav.getsampwidth() != 2:
                raise WavFormatError(
                    f"{path}: sample width {8 * wav.getsampwidth()} bits (need 16-bit)")
            if wav.getframerate() != dsp.SAMPLE_RATE:
                raise WavFormatError(
                    f"{path}: sample rate {wav.getframerate()} Hz (need {dsp.SAMPLE_RATE})")
            raw = wav.readframes(wav.getnframes())
    except wave.Error as err:
        raise WavFormatError(f"{path}: not a readable WAV file ({err})") from None
    return dsp.AudioBuffer(pcm16_to_float(raw))


def write_wav(path, audio: dsp.AudioBuffer) -> None:
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(audio.sample_rate)
        wav.writeframes(float_to_pcm16(audio.samples))
