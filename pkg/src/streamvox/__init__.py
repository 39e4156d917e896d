"""Streaming low-latency voice conversion engine.

Three separately trained networks run per 10 ms frame: an acoustic model
produces phonetic posteriorgrams from MFCCs, a conversion model maps them
(plus target pitch and speaker identity) to vocoder features, and a linear
prediction vocoder synthesizes the waveform sample by sample.
"""

from .dsp import AudioBuffer, FrameGeometry
from .errors import (
    BadMagic,
    DegenerateSpectrum,
    EmptyInput,
    InvalidProfile,
    NumericalError,
    ShapeMismatch,
    StreamvoxError,
    TruncatedFile,
    VersionMismatch,
)
from .nn import ModelBundle, load_bundle, load_bundle_file, save_bundle, save_bundle_file
from .pipeline import (
    ConversionRequest,
    ConversionSession,
    LatencyBudget,
    budget_for_mode,
    convert,
    latency_of,
    synthesize,
)
from .pitch import SpeakerProfile, load_registry, map_f0, save_registry

__version__ = "0.1.0"
