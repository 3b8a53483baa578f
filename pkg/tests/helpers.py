"""Signal constructions and small fixtures shared by the test modules."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from wavrefine.audio import Waveform

FS = 16000


def sine_in_noise(snr_db: float = 0.0, seed: int = 0, duration_s: float = 3.0, lead_s: float = 0.3, freq: float = 440.0, amp: float = 0.3):
    """(clean, noisy): a sine after ``lead_s`` of silence, plus white noise at ``snr_db`` over the tone."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * FS)
    t = np.arange(n) / FS
    x = amp * np.sin(2 * np.pi * freq * t)
    x[: int(lead_s * FS)] = 0.0
    noise_std = np.sqrt(amp**2 / 2 / 10 ** (snr_db / 10))
    return Waveform(x, FS), Waveform(x + noise_std * rng.standard_normal(n), FS)


def vowel_in_noise(seed: int = 0, duration_s: float = 3.0, lead_s: float = 0.3, f0: float = 150.0, amps=(1.0, 0.1, 0.8, 0.4, 0.6), scale: float = 0.3):
    """(clean, noisy, f0): pulse-like harmonic vowel with a weak 2nd harmonic at 0 dB white noise."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * FS)
    t = np.arange(n) / FS
    x = sum(a * np.cos(2 * np.pi * (k + 1) * f0 * t) for k, a in enumerate(amps))
    x = scale * x / np.max(np.abs(x))
    x[: int(lead_s * FS)] = 0.0
    active = x[int(lead_s * FS) :]
    noisy = x + np.sqrt(np.mean(active**2)) * rng.standard_normal(n)
    return Waveform(x, FS), Waveform(noisy, FS), f0


def band_power_db(w: Waveform, freq: float, start_s: float = 0.5, half_width_hz: float = 20.0) -> float:
    """Power (dB) in a narrow band around ``freq`` after ``start_s``, from one long Hann-windowed FFT."""
    x = w.samples[int(start_s * w.sample_rate_hz) :]
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)))) ** 2
    f = np.fft.rfftfreq(len(x), 1 / w.sample_rate_hz)
    band = np.abs(f - freq) <= half_width_hz
    return float(10 * np.log10(spec[band].sum() + 1e-30))


def write_pcm(path, pcm: np.ndarray, rate: int = FS, channels: int = 1, width: int = 2):
    """Write raw integer PCM through the stdlib, independent of the package writer."""
    with wave.open(str(path), "wb") as f:
        f.setnchannels(channels)
        f.setsampwidth(width)
        f.setframerate(rate)
        f.writeframes(np.asarray(pcm).astype("<i2" if width == 2 else "u1").tobytes())
    return Path(path)


def write_corpus(root: Path, pairs, names=None) -> Path:
    """Write (clean, noisy) pairs as WAVs under ``root`` and return a manifest path."""
    from wavrefine.audio import write_wav

    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "noisy").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (c, n) in enumerate(pairs):
        name = names[i] if names else f"utt{i:03d}.wav"
        write_wav(c, root / "clean" / name)
        write_wav(n, root / "noisy" / name)
        lines.append(f"clean/{name}\tnoisy/{name}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
