"""Waveform-domain enhancement of device-recorded speech with a SEGAN-style GAN."""

from wavrefine.audio import Waveform, normalize_peak, read_wav, resample, write_wav

__version__ = "0.1.0"

__all__ = [
    "Waveform",
    "normalize_peak",
    "read_wav",
    "resample",
    "write_wav",
]
