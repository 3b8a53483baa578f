"""Objective speech-quality measures: segmental SNR, STOI and log-spectral distance."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from wavrefine.audio import Waveform, read_wav
from wavrefine.dsp import stft

log = logging.getLogger(__name__)

SSNR_MIN_DB = -10.0
SSNR_MAX_DB = 35.0

# STOI constants (10 kHz internal rate, 15 third-octave bands, 384 ms segments)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

_EPS = np.finfo(np.float64).eps


def _check_pair(clean: Waveform, processed: Waveform):
    if len(clean) != len(processed):
        raise ValueError(f"length mismatch: {len(clean)} vs {len(processed)}")
    if clean.sample_rate_hz != processed.sample_rate_hz:
        raise ValueError("sample rate mismatch")


def ssnr_frames(
    clean: Waveform, processed: Waveform, frame_ms: float = 32.0, silence_db: float = -40.0
) -> np.ndarray:
    """Clamped per-frame SNRs (dB) of the frames whose clean energy is above ``silence_db`` dBFS."""
    _check_pair(clean, processed)
    fs = clean.sample_rate_hz
    frame = int(round(frame_ms * fs / 1000))
    hop = frame // 2
    c = clean.samples
    e = c - processed.samples
    if len(c) < frame:
        c_frames, e_frames = c[None, :], e[None, :]
    else:
        c_frames = np.lib.stride_tricks.sliding_window_view(c, frame)[::hop]
        e_frames = np.lib.stride_tricks.sliding_window_view(e, frame)[::hop]
    sig = np.sum(c_frames**2, axis=1)
    err = np.sum(e_frames**2, axis=1)
    level_db = 10 * np.log10(sig / c_frames.shape[1] + 1e-300)
    keep = level_db >= silence_db
    if not np.any(keep):
        raise ValueError("no frames above the silence threshold")
    sig, err = sig[keep], err[keep]
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig / err)
    return np.clip(snr, SSNR_MIN_DB, SSNR_MAX_DB)


def ssnr(clean: Waveform, processed: Waveform, frame_ms: float = 32.0, silence_db: float = -40.0) -> float:
    """Segmental SNR in dB, each frame clamped to [-10, 35]."""
    return float(np.mean(ssnr_frames(clean, processed, frame_ms, silence_db)))


def _hann(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frames(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    starts = range(0, len(x) - frame, hop)
    return np.array([x[i : i + frame] for i in starts]).reshape(-1, frame)


def _remove_silent_frames(x, y, dyn_range, frame, hop):
    w = _hann(frame)
    xf = _frames(x, frame, hop) * w
    yf = _frames(y, frame, hop) * w
    energies = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    mask = energies > energies.max() - dyn_range
    xf, yf = xf[mask], yf[mask]

    def ola(fr):
        out = np.zeros((len(fr) - 1) * hop + frame) if len(fr) else np.zeros(0)
        for i, f in enumerate(fr):
            out[i * hop : i * hop + frame] += f
        return out

    return ola(xf), ola(yf)


def third_octave_bands(fs: int = STOI_FS, nfft: int = STOI_NFFT, bands: int = STOI_BANDS, min_freq: float = STOI_MIN_FREQ):
    """Binary (bands, nfft/2+1) matrix summing FFT bins into one-third octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(bands, dtype=float)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((bands, len(f)))
    for i in range(bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1
    return obm


def stoi_resample(x: np.ndarray, fs: int, target: int = STOI_FS) -> np.ndarray:
    """Resample with the classic Kaiser design used by reference STOI code.

    Cutoff at the lower Nyquist, 10% roll-off, 60 dB rejection, taps
    normalized to unit sum before ``resample_poly`` applies the gain.
    """
    g = math.gcd(int(fs), int(target))
    up, down = target // g, fs // g
    if up == down:
        return np.asarray(x, dtype=np.float64)
    cutoff = 1.0 / (2 * max(up, down))
    half = math.ceil((60 - 8) / (28.714 * cutoff / 10))
    t = np.arange(-half, half + 1)
    h = np.kaiser(2 * half + 1, 0.1102 * (60 - 8.7)) * 2 * up * cutoff * np.sinc(2 * cutoff * t)
    return resample_poly(x, up, down, window=h / h.sum())


def stoi(clean: Waveform, processed: Waveform) -> float:
    """Short-time objective intelligibility.

    Both signals are resampled to 10 kHz, silent frames (40 dB below the
    loudest clean frame) are dropped, and the clipped, normalized envelope
    correlation in 15 one-third octave bands is averaged over 384 ms
    segments.
    """
    _check_pair(clean, processed)
    if clean.duration_s < 3.0:
        warnings.warn("STOI on less than 3 s of audio is unreliable", RuntimeWarning, stacklevel=2)
    x = stoi_resample(clean.samples, clean.sample_rate_hz)
    y = stoi_resample(processed.samples, processed.sample_rate_hz)
    hop = STOI_FRAME // 2
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE_DB, STOI_FRAME, hop)
    w = _hann(STOI_FRAME)
    xs = np.fft.rfft(_frames(x, STOI_FRAME, hop) * w, n=STOI_NFFT).T
    ys = np.fft.rfft(_frames(y, STOI_FRAME, hop) * w, n=STOI_NFFT).T
    if xs.shape[1] < STOI_SEGMENT:
        raise ValueError(
            f"only {xs.shape[1]} non-silent frames; STOI needs at least {STOI_SEGMENT} (384 ms)"
        )
    obm = third_octave_bands()
    x_tob = np.sqrt(obm @ np.abs(xs) ** 2)
    y_tob = np.sqrt(obm @ np.abs(ys) ** 2)

    n = STOI_SEGMENT
    idx = np.arange(n, x_tob.shape[1] + 1)[:, None] + np.arange(-n, 0)
    xseg = x_tob[:, idx].transpose(1, 0, 2)  # (segments, bands, n)
    yseg = y_tob[:, idx].transpose(1, 0, 2)
    scale = np.linalg.norm(xseg, axis=2, keepdims=True) / (np.linalg.norm(yseg, axis=2, keepdims=True) + _EPS)
    yn = yseg * scale
    clip = 10 ** (-STOI_BETA_DB / 20)
    yp = np.minimum(yn, xseg * (1 + clip))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xc = xseg - xseg.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + _EPS
    d = float(np.sum(yp * xc) / (xseg.shape[0] * xseg.shape[1]))
    return min(1.0, max(0.0, d))


def lsd(clean: Waveform, processed: Waveform, frame_ms: float = 32.0, eps: float = 1e-10) -> float:
    """Log-spectral distance in dB (RMS over frames and bins)."""
    _check_pair(clean, processed)
    frame = int(round(frame_ms * clean.sample_rate_hz / 1000))
    a = np.abs(stft(clean, frame, frame // 2, window="hann").spectra)
    b = np.abs(stft(processed, frame, frame // 2, window="hann").spectra)
    d = 20 * np.log10(a + eps) - 20 * np.log10(b + eps)
    return float(np.sqrt(np.mean(d**2)))


METRIC_NAMES = ("ssnr_db", "stoi", "lsd_db")


@dataclass
class MetricReport:
    system: str
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)

    def column(self, name: str) -> list[float]:
        i = METRIC_NAMES.index(name) + 1
        return [r[i] for r in self.rows]

    @property
    def mean(self) -> dict[str, float]:
        n = len(self.rows)
        return {m: math.fsum(self.column(m)) / n if n else math.nan for m in METRIC_NAMES}

    @property
    def std(self) -> dict[str, float]:
        out = {}
        for m, mu in self.mean.items():
            vals = self.column(m)
            out[m] = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals)) if vals else math.nan
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["utt_id", *METRIC_NAMES])
            for utt, *vals in self.rows:
                wr.writerow([utt, *(f"{v:.6f}" for v in vals)])
            wr.writerow(["mean", *(f"{self.mean[m]:.6f}" for m in METRIC_NAMES)])
            wr.writerow(["std", *(f"{self.std[m]:.6f}" for m in METRIC_NAMES)])


def score_pair(clean: Waveform, processed: Waveform) -> tuple[float, float, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return ssnr(clean, processed), stoi(clean, processed), lsd(clean, processed)


def _match_lengths(clean: Waveform, proc: Waveform, tolerance: int = 1):
    d = len(clean) - len(proc)
    if abs(d) > tolerance:
        return None
    n = min(len(clean), len(proc))
    return clean.with_samples(clean.samples[:n]), proc.with_samples(proc.samples[:n])


def _system_file(system_dir: Path, clean_path: Path, degraded_path: Path) -> Path:
    candidate = system_dir / degraded_path.name
    return candidate if candidate.exists() else system_dir / clean_path.name


def evaluate_corpus(pairs, systems: dict[str, Path | None], jobs: int = 1) -> dict[str, MetricReport]:
    """Score every system directory against the clean side of ``pairs``.

    A system's output for a pair is looked up by the degraded file's name
    (falling back to the clean file's name). A system mapped to ``None``
    scores the degraded files themselves. Missing or mismatched files are
    logged and skipped.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty manifest")
    reports = {}
    for name, sdir in systems.items():
        tasks = []
        for clean_path, degraded_path in pairs:
            if sdir is None:
                proc_path = Path(degraded_path)
            else:
                proc_path = _system_file(Path(sdir), Path(clean_path), Path(degraded_path))
            if not Path(clean_path).exists() or not proc_path.exists():
                log.warning("%s: missing %s, row skipped", name, proc_path if Path(clean_path).exists() else clean_path)
                continue
            tasks.append((Path(degraded_path).stem, Path(clean_path), proc_path))
        if jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(jobs) as ex:
                results = list(ex.map(_score_files, tasks))
        else:
            results = [_score_files(t) for t in tasks]
        report = MetricReport(name)
        for (utt, *_), res in zip(tasks, results):
            if res is None:
                log.warning("%s: %s has mismatched length or rate, row skipped", name, utt)
                continue
            report.rows.append((utt, *res))
        reports[name] = report
    return reports


def _score_files(task):
    _, clean_path, proc_path = task
    clean, proc = read_wav(clean_path), read_wav(proc_path)
    if clean.sample_rate_hz != proc.sample_rate_hz:
        return None
    matched = _match_lengths(clean, proc)
    if matched is None:
        return None
    return score_pair(*matched)


def format_table(reports: dict[str, MetricReport]) -> str:
    """Systems as rows, metrics as columns (mean +/- std)."""
    headers = ["system", "SSNR (dB)", "STOI", "LSD (dB)", "n"]
    lines = []
    for name, r in reports.items():
        mu, sd = r.mean, r.std
        lines.append(
            [
                name,
                f"{mu['ssnr_db']:.2f} ± {sd['ssnr_db']:.2f}",
                f"{mu['stoi']:.3f} ± {sd['stoi']:.3f}",
                f"{mu['lsd_db']:.2f} ± {sd['lsd_db']:.2f}",
                str(len(r.rows)),
            ]
        )
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(headers)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [fmt(headers), "  ".join("-" * w for w in widths)]
    out += [fmt(l) for l in lines]
    return "\n".join(out) + "\n"
