"""Mono PCM16 WAV I/O, polyphase resampling and peak normalization."""

from __future__ import annotations

import math
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

PIPELINE_RATES = (16000, 48000)

# Kaiser-windowed polyphase low-pass.
KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE file."""


class UnsupportedWavError(ValueError):
    """Well-formed WAV, but not 16-bit PCM mono."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            comptype = f.getcomptype()
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedWavError(f"{path}: {msg}") from exc
        raise WavFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    if comptype != "NONE" or width != 2:
        raise UnsupportedWavError(f"{path}: need 16-bit PCM, got {8 * width}-bit {comptype}")
    if channels != 1:
        raise UnsupportedWavError(f"{path}: need mono, got {channels} channels")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def encode_pcm16(samples, scale: float = 32767.0) -> tuple[np.ndarray, int]:
    """Quantize to int16; returns (pcm, number of clipped samples)."""
    x = np.asarray(samples, dtype=np.float64) * scale
    v = np.round(x)
    clipped = int(np.count_nonzero((v > 32767) | (v < -32768)))
    return np.clip(v, -32768, 32767).astype("<i2"), clipped


def write_wav(w: Waveform, path, scale: float = 32767.0) -> int:
    """Write ``w`` as 16-bit PCM mono.

    Samples are encoded as ``round(s * scale)`` clamped to the int16 range.
    The default scale keeps +1.0 and -1.0 symmetric; ``scale=32768`` is the
    exact inverse of :func:`read_wav` and reproduces a file byte for byte.
    Returns the number of samples that had to be clipped.
    """
    pcm, clipped = encode_pcm16(w.samples, scale)
    if clipped:
        warnings.warn(f"{path}: clipped {clipped} out-of-range samples", RuntimeWarning, stacklevel=2)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate_hz)
        f.writeframes(pcm.tobytes())
    return clipped


def resample_filter(up: int, down: int) -> np.ndarray:
    """Unit-DC-gain low-pass prototype; ``resample_poly`` applies the factor ``up`` itself."""
    factor = max(up, down)
    numtaps = TAPS_PER_PHASE * factor
    if numtaps % 2 == 0:
        numtaps += 1
    return signal.firwin(numtaps, 1.0 / factor, window=("kaiser", KAISER_BETA))


def resample(w: Waveform, target_hz: int) -> Waveform:
    """Rational-factor polyphase resampling with a Kaiser anti-aliasing filter."""
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    if target_hz == w.sample_rate_hz:
        return w
    g = math.gcd(target_hz, w.sample_rate_hz)
    up, down = target_hz // g, w.sample_rate_hz // g
    y = signal.resample_poly(w.samples, up, down, window=resample_filter(up, down))
    return Waveform(y, target_hz)


def normalize_peak(w: Waveform, peak: float = 1.0) -> Waveform:
    if not 0.0 < peak <= 1.0:
        raise ValueError(f"peak must be in (0, 1], got {peak}")
    if len(w) == 0:
        raise ValueError("cannot normalize an empty waveform")
    m = float(np.max(np.abs(w.samples)))
    if m == 0.0:
        warnings.warn("all-zero waveform left unnormalized", RuntimeWarning, stacklevel=2)
        return w
    if abs(m - peak) <= 1e-12:
        return w
    return w.with_samples(w.samples * (peak / m))


def check_pipeline_rate(w: Waveform, path: str | Path = "<memory>"):
    if w.sample_rate_hz not in PIPELINE_RATES:
        raise ValueError(
            f"{path}: sample rate {w.sample_rate_hz} Hz not supported (expected one of {PIPELINE_RATES})"
        )
