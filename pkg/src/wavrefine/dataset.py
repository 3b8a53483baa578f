"""Clean/degraded pair alignment, silence trimming and fixed-window chunking."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from wavrefine.audio import Waveform

TRAINING = "training-overlapped"
INFERENCE = "inference-sequential"

CHUNK_MAGIC = b"WRCHNK1"


@dataclass(frozen=True)
class AlignedPair:
    clean: Waveform
    degraded: Waveform
    delay_samples: int

    def __post_init__(self):
        if len(self.clean) != len(self.degraded):
            raise ValueError("aligned signals differ in length")
        if self.clean.sample_rate_hz != self.degraded.sample_rate_hz:
            raise ValueError("aligned signals differ in sample rate")


@dataclass(frozen=True)
class ChunkSet:
    """Fixed-length windows of one signal plus what is needed to undo the split.

    ``chunks`` has shape (count, window_len). In inference mode the final
    chunk overlaps its predecessor by ``prepad_len`` samples.
    """

    chunks: np.ndarray
    window_len: int
    hop_len: int
    original_len: int
    mode: str
    prepad_len: int = 0
    sample_rate_hz: int = 16000

    def __len__(self):
        return self.chunks.shape[0]


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def cross_correlation(reference: np.ndarray, recorded: np.ndarray, max_lag: int) -> np.ndarray:
    """``c[l] = sum_n reference[n] * recorded[n + l]`` for l in [0, max_lag]."""
    # no circular wrap for lags in [0, max_lag]; samples of recorded past nfft never pair with reference
    nfft = _next_pow2(len(reference) + max_lag)
    spec = np.fft.rfft(recorded, nfft) * np.conj(np.fft.rfft(reference, nfft))
    return np.fft.irfft(spec, nfft)[: max_lag + 1]


def estimate_delay(reference: Waveform, recorded: Waveform, max_lag: int) -> int:
    """Lag of ``recorded`` behind ``reference`` that maximizes their cross-correlation."""
    if len(reference) == 0 or len(recorded) == 0:
        raise ValueError("empty signal")
    if reference.sample_rate_hz != recorded.sample_rate_hz:
        raise ValueError("sample rates differ")
    if max_lag <= 0 or max_lag >= len(recorded):
        raise ValueError(f"max_lag must be in [1, {len(recorded) - 1}], got {max_lag}")
    c = cross_correlation(reference.samples, recorded.samples, max_lag)
    return int(np.argmax(c))


def align(reference: Waveform, recorded: Waveform, max_lag: int, window_len: int = 16384) -> AlignedPair:
    delay = estimate_delay(reference, recorded, max_lag)
    shifted = recorded.samples[delay:]
    n = min(len(reference), len(shifted))
    if n < window_len:
        raise ValueError(f"aligned length {n} shorter than one window ({window_len})")
    return AlignedPair(
        reference.with_samples(reference.samples[:n]),
        recorded.with_samples(shifted[:n]),
        delay,
    )


def silence_bounds(
    w: Waveform,
    energy_threshold_db: float = -50.0,
    min_silence_ms: float = 200.0,
    frame_ms: float = 20.0,
    hop_ms: float = 10.0,
) -> tuple[int, int]:
    """Sample range [start, stop) left after trimming long edge silences."""
    if min_silence_ms <= 0:
        raise ValueError("min_silence_ms must be positive")
    x = w.samples
    fs = w.sample_rate_hz
    frame = max(1, int(round(frame_ms * fs / 1000)))
    hop = max(1, int(round(hop_ms * fs / 1000)))
    if len(x) == 0:
        raise ValueError("empty signal")
    n_frames = 1 + max(0, -(-(len(x) - frame) // hop))
    padded = np.zeros((n_frames - 1) * hop + frame)
    padded[: len(x)] = x
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(frame)]
    energy_db = 10 * np.log10(np.mean(frames**2, axis=1) + 1e-20)
    active = np.flatnonzero(energy_db > energy_threshold_db)
    if active.size == 0:
        raise ValueError("entire signal is below the silence threshold")

    amp = 10 ** (energy_threshold_db / 20)
    loud = np.flatnonzero(np.abs(x) > amp)
    # refine frame-level boundaries to the first/last loud sample inside the edge frames
    first = starts[active[0]]
    head = loud[loud >= first]
    start = int(head[0]) if head.size else int(first)
    last_end = min(len(x), starts[active[-1]] + frame)
    tail = loud[loud < last_end]
    stop = int(tail[-1]) + 1 if tail.size else int(last_end)

    min_len = min_silence_ms * fs / 1000
    if start <= min_len:
        start = 0
    if len(x) - stop <= min_len:
        stop = len(x)
    return start, stop


def trim_silence(w: Waveform, energy_threshold_db: float = -50.0, min_silence_ms: float = 200.0) -> Waveform:
    start, stop = silence_bounds(w, energy_threshold_db, min_silence_ms)
    if start == 0 and stop == len(w):
        return w
    return w.with_samples(w.samples[start:stop])


def trim_pair(pair: AlignedPair, energy_threshold_db: float = -50.0, min_silence_ms: float = 200.0) -> AlignedPair:
    """Trim both signals with the offsets found on the clean one."""
    start, stop = silence_bounds(pair.clean, energy_threshold_db, min_silence_ms)
    return AlignedPair(
        pair.clean.with_samples(pair.clean.samples[start:stop]),
        pair.degraded.with_samples(pair.degraded.samples[start:stop]),
        pair.delay_samples,
    )


def _check_window(window_len: int):
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if window_len & (window_len - 1):
        warnings.warn(
            f"window_len {window_len} is not a power of two; the generator needs a length "
            "divisible by 2**num_layers",
            RuntimeWarning,
            stacklevel=3,
        )


def chunk_training(w: Waveform, window_len: int = 16384, hop_len: int = 8192) -> ChunkSet:
    _check_window(window_len)
    if hop_len <= 0:
        raise ValueError("hop_len must be positive")
    n = len(w)
    if n < window_len:
        raise ValueError(f"signal of {n} samples is shorter than the {window_len}-sample window")
    count = (n - window_len) // hop_len + 1
    idx = np.arange(count)[:, None] * hop_len + np.arange(window_len)
    return ChunkSet(w.samples[idx], window_len, hop_len, n, TRAINING, 0, w.sample_rate_hz)


def chunk_inference(w: Waveform, window_len: int = 16384) -> ChunkSet:
    _check_window(window_len)
    x = w.samples
    n = len(x)
    if n == 0:
        raise ValueError("empty signal")
    if n < window_len:
        pad = window_len - n
        chunk = np.concatenate([np.full(pad, x[0]), x])
        return ChunkSet(chunk[None, :], window_len, window_len, n, INFERENCE, pad, w.sample_rate_hz)
    full, rem = divmod(n, window_len)
    chunks = [x[i * window_len : (i + 1) * window_len] for i in range(full)]
    prepad = 0
    if rem:
        chunks.append(x[n - window_len :])
        prepad = window_len - rem
    return ChunkSet(np.stack(chunks), window_len, window_len, n, INFERENCE, prepad, w.sample_rate_hz)


def stitch(c: ChunkSet) -> Waveform:
    if c.mode != INFERENCE:
        raise ValueError(f"can only stitch {INFERENCE!r} chunk sets, got {c.mode!r}")
    parts = list(c.chunks[:-1]) + [c.chunks[-1][c.prepad_len :]]
    out = np.concatenate(parts)
    assert len(out) == c.original_len
    return Waveform(out, c.sample_rate_hz)


def read_manifest(path) -> list[tuple[Path, Path]]:
    """Tab-separated ``clean_path<TAB>degraded_path`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(fields)}")
        pairs.append(tuple(p if Path(p).is_absolute() else path.parent / p for p in map(Path, fields)))
    return pairs


def write_chunk_cache(path, chunks: np.ndarray, window_len: int, hop_len: int):
    """Write chunks as ``WRCHNK1``, u32 window, u32 hop, u32 count, then float32 LE samples."""
    chunks = np.asarray(chunks, dtype="<f4").reshape(-1, window_len)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHUNK_MAGIC)
        f.write(struct.pack("<III", window_len, hop_len, chunks.shape[0]))
        f.write(chunks.tobytes())
    tmp.replace(path)


def read_chunk_cache(path) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    head = len(CHUNK_MAGIC) + 12
    if data[: len(CHUNK_MAGIC)] != CHUNK_MAGIC or len(data) < head:
        raise ValueError(f"{path}: not a chunk cache")
    window_len, hop_len, count = struct.unpack("<III", data[len(CHUNK_MAGIC) : head])
    body = np.frombuffer(data, dtype="<f4", offset=head)
    if body.size != window_len * count:
        raise ValueError(f"{path}: expected {window_len * count} samples, found {body.size}")
    return body.reshape(count, window_len).astype(np.float32), window_len, hop_len
