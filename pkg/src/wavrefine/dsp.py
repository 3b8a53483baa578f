"""Classical STFT-domain enhancers used as the pre-enhancement baseline.

The chain here is a Wiener filter with a decision-directed a-priori SNR
estimate followed by harmonic regeneration noise reduction (HRNR).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from wavrefine.audio import Waveform

EPS = 1e-12


@dataclass(frozen=True)
class StftFrames:
    spectra: np.ndarray  # (frames, frame_len // 2 + 1), complex
    frame_len: int
    hop: int
    length: int
    sample_rate_hz: int = 16000
    window: str = "sqrt-hann"

    @property
    def pad_left(self) -> int:
        return self.frame_len - self.hop


def analysis_window(name: str, frame_len: int) -> np.ndarray:
    if name == "sqrt-hann":
        return np.sqrt(signal.get_window("hann", frame_len, fftbins=True))
    if name == "hann":
        return signal.get_window("hann", frame_len, fftbins=True)
    raise ValueError(f"unknown window {name!r}")


def num_frames(length: int, frame_len: int, hop: int) -> int:
    """Frames needed so every input sample sees the full overlap-add of the window.

    The signal is padded with ``frame_len - hop`` zeros in front; frames
    start every ``hop`` samples until the last input sample is covered by a
    frame start.
    """
    return (frame_len - hop + max(length, 1) - 1) // hop + 1


def stft(w: Waveform, frame_len: int = 512, hop: int = 256, window: str = "sqrt-hann") -> StftFrames:
    if frame_len <= 0 or hop <= 0:
        raise ValueError("frame_len and hop must be positive")
    if hop > frame_len:
        raise ValueError(f"hop {hop} exceeds frame length {frame_len}")
    x = w.samples
    n_frames = num_frames(len(x), frame_len, hop)
    padded = np.zeros((n_frames - 1) * hop + frame_len)
    pad_left = frame_len - hop
    padded[pad_left : pad_left + len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop]
    spectra = np.fft.rfft(frames * analysis_window(window, frame_len), axis=1)
    return StftFrames(spectra, frame_len, hop, len(x), w.sample_rate_hz, window)


def istft(s: StftFrames) -> Waveform:
    """Weighted overlap-add; the least-squares inverse of :func:`stft`."""
    win = analysis_window(s.window, s.frame_len)
    frames = np.fft.irfft(s.spectra, s.frame_len, axis=1) * win
    n_frames = frames.shape[0]
    total = (n_frames - 1) * s.hop + s.frame_len
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        out[i * s.hop : i * s.hop + s.frame_len] += frames[i]
        norm[i * s.hop : i * s.hop + s.frame_len] += win**2
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-8)
    start = s.pad_left
    length = s.length if s.length else s.frame_len
    seg = out[start : start + length]
    if len(seg) < length:
        seg = np.concatenate([seg, np.zeros(length - len(seg))])
    return Waveform(seg, s.sample_rate_hz)


@dataclass(frozen=True)
class WienerParams:
    frame_len: int = 512
    hop: int = 256
    alpha_dd: float = 0.98
    gain_floor_db: float = -18.0
    init_noise_frames: int = 6
    noise_smoothing: float = 0.98
    vad_threshold: float = 0.15

    def __post_init__(self):
        if not 0.0 <= self.alpha_dd < 1.0:
            raise ValueError("alpha_dd must be in [0, 1)")
        if self.gain_floor_db > 0:
            raise ValueError("gain_floor_db must be <= 0")
        if self.init_noise_frames < 1:
            raise ValueError("init_noise_frames must be >= 1")
        if not 0.0 <= self.noise_smoothing < 1.0:
            raise ValueError("noise_smoothing must be in [0, 1)")

    @property
    def gain_floor(self) -> float:
        return 10 ** (self.gain_floor_db / 20)

    @property
    def min_frames(self) -> int:
        return max(10, self.init_noise_frames)


@dataclass(frozen=True)
class HrnrParams:
    wiener: WienerParams = field(default_factory=WienerParams)
    rho: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")


def decision_directed_gain(power: np.ndarray, p: WienerParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin Wiener gains and the noise PSD track for a (frames, bins) power spectrogram.

    The noise PSD starts as the mean of the first ``init_noise_frames`` frames
    and is recursively averaged over frames a likelihood-ratio VAD marks as
    noise-only.
    """
    n_frames = power.shape[0]
    gains = np.empty_like(power)
    noise = np.empty_like(power)
    lam = np.maximum(power[: p.init_noise_frames].mean(axis=0), EPS)
    prev_clean = np.zeros(power.shape[1])
    g_min = p.gain_floor
    for t in range(n_frames):
        gamma = power[t] / lam
        xi = p.alpha_dd * prev_clean / lam + (1 - p.alpha_dd) * np.maximum(gamma - 1.0, 0.0)
        g = np.maximum(xi / (1.0 + xi), g_min)
        gains[t] = g
        noise[t] = lam
        prev_clean = g**2 * power[t]
        llr = gamma * xi / (1.0 + xi) - np.log1p(xi)
        if t >= p.init_noise_frames and llr.mean() < p.vad_threshold:
            lam = np.maximum(p.noise_smoothing * lam + (1 - p.noise_smoothing) * power[t], EPS)
    return gains, noise


def _spectra(w: Waveform, p: WienerParams) -> StftFrames:
    s = stft(w, p.frame_len, p.hop)
    if s.spectra.shape[0] < p.min_frames:
        raise ValueError(f"need at least {p.min_frames} frames for noise estimation, got {s.spectra.shape[0]}")
    return s


def wiener_enhance(w: Waveform, params: WienerParams | None = None) -> Waveform:
    p = params or WienerParams()
    s = _spectra(w, p)
    gains, _ = decision_directed_gain(np.abs(s.spectra) ** 2, p)
    return istft(replace(s, spectra=gains * s.spectra))


def hrnr_enhance(w: Waveform, params: HrnrParams | None = None) -> Waveform:
    """Wiener pass, then re-estimate the SNR from a half-wave rectified copy of its output.

    Rectification regenerates harmonics the first pass suppressed; the
    refined a-priori SNR blends that spectrum with the first-pass one.
    """
    p = params or HrnrParams()
    wp = p.wiener
    s = _spectra(w, wp)
    power = np.abs(s.spectra) ** 2
    gains, noise = decision_directed_gain(power, wp)
    first = gains * s.spectra
    rectified = np.maximum(istft(replace(s, spectra=first)).samples, 0.0)
    harmo = stft(w.with_samples(rectified), wp.frame_len, wp.hop).spectra
    xi = (p.rho * np.abs(first) ** 2 + (1 - p.rho) * np.abs(harmo) ** 2) / noise
    g = np.maximum(xi / (1.0 + xi), wp.gain_floor)
    return istft(replace(s, spectra=g * s.spectra))


STAGES = {"wiener": (wiener_enhance, WienerParams), "hrnr": (hrnr_enhance, HrnrParams)}


@dataclass(frozen=True)
class EnhancerChain:
    stages: tuple[tuple[str, object], ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("enhancer chain must have at least one stage")
        for name, params in self.stages:
            if name not in STAGES:
                raise ValueError(f"unknown stage {name!r}; choose from {sorted(STAGES)}")
            if not isinstance(params, STAGES[name][1]):
                raise TypeError(f"stage {name!r} needs {STAGES[name][1].__name__}")

    @classmethod
    def from_names(cls, names, wiener: WienerParams | None = None, rho: float = 0.5) -> "EnhancerChain":
        wiener = wiener or WienerParams()
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        stages = []
        for n in names:
            stages.append((n, wiener if n == "wiener" else HrnrParams(wiener, rho)))
        return cls(tuple(stages))


DEFAULT_CHAIN = EnhancerChain.from_names(["wiener", "hrnr"])


def pre_enhance(w: Waveform, chain: EnhancerChain = DEFAULT_CHAIN) -> Waveform:
    for name, params in chain.stages:
        w = STAGES[name][0](w, params)
    return w
