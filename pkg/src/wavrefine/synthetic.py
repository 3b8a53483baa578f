"""Synthetic voiced-speech stand-ins for desk-scale experiments and tests."""

from __future__ import annotations

import numpy as np

from wavrefine.audio import Waveform


def multisine_speech(rng: np.random.Generator, duration_s: float, fs: int = 16000, pause_s: float = 0.15) -> Waveform:
    """Harmonic signal with a wandering pitch and a syllable-rate envelope.

    Leading and trailing ``pause_s`` seconds are digital silence, as in a
    trimmed recording.
    """
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    f0 = rng.uniform(100, 220) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    x = np.zeros(n)
    for h in range(1, 13):
        amp = rng.uniform(0.3, 1.0) / h
        x += amp * np.cos(h * phase + rng.uniform(-0.3, 0.3)) * (h * f0 < 0.45 * fs)
    env = 0.2 + 0.8 * np.clip(np.sin(2 * np.pi * rng.uniform(3, 5) * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 0.7
    x *= env
    x *= rng.uniform(0.3, 0.6) / np.max(np.abs(x))
    pause = int(pause_s * fs)
    x[:pause] = 0.0
    if pause:
        x[-pause:] = 0.0
    return Waveform(x, fs)


def add_white_noise(clean: Waveform, snr_db: float, rng: np.random.Generator) -> Waveform:
    """Clean plus white noise scaled to ``snr_db`` relative to the active (non-zero) samples."""
    x = clean.samples
    active = x[x != 0]
    power = np.mean(active**2) if active.size else np.mean(x**2)
    noise = rng.standard_normal(len(x)) * np.sqrt(power / 10 ** (snr_db / 10))
    return clean.with_samples(x + noise)


def toy_corpus(n: int, seed: int = 0, fs: int = 16000, dur=(1.0, 3.0), snr=(0.0, 10.0)) -> list[tuple[Waveform, Waveform]]:
    """``n`` (clean, noisy) pairs of 1-3 s multi-sine speech in white noise at 0-10 dB SNR."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        clean = multisine_speech(rng, rng.uniform(*dur), fs)
        pairs.append((clean, add_white_noise(clean, rng.uniform(*snr), rng)))
    return pairs
