"""SEGAN generator and discriminator built from :mod:`wavrefine.autograd` ops.

The generator is a strided-convolution encoder, a latent concatenated at the
bottleneck, and a mirrored fractional-strided decoder whose every level is
concatenated with the homologous encoder output. With ``residual_skip`` the
network output is added to its input, so it only has to learn a correction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from wavrefine.autograd import (
    RefStats,
    Tensor,
    batch_stats,
    concat,
    conv1d,
    dense,
    leaky_relu,
    no_grad,
    prelu,
    reshape,
    tanh,
    tconv1d,
    truncated_normal,
    virtual_batch_norm,
)

PAPER_CHANNELS = (16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024)
TOY_CHANNELS = (16, 32, 64, 128)


@dataclass
class SeganConfig:
    window_len: int = 16384
    enc_channels: tuple[int, ...] = PAPER_CHANNELS
    filter_width: int = 31
    stride: int = 2
    latent_channels: int | None = None
    d_alpha: float = 0.3
    residual_skip: bool = True
    lambda_l1: float = 100.0
    J: int = 2
    P_J: float = 0.5
    warmup_epochs: int = 50
    total_epochs: int = 120
    batch_size: int = 100
    learning_rate: float = 2e-4
    d_iters_K: int = 1
    steps_per_epoch: int | None = None
    stochastic_schedule: bool = False
    fixed_z: bool = False
    vbn_ref_size: int | None = None
    vbn_include_current: bool = True
    vbn_refresh: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.validate()

    def validate(self):
        if not self.enc_channels:
            raise ValueError("enc_channels must not be empty")
        if any(c <= 0 for c in self.enc_channels):
            raise ValueError("channel counts must be positive")
        if self.stride < 1 or self.filter_width < 1:
            raise ValueError("stride and filter_width must be positive")
        if self.window_len <= 0 or self.window_len % self.stride ** len(self.enc_channels):
            raise ValueError(
                f"window_len {self.window_len} must be divisible by "
                f"{self.stride}**{len(self.enc_channels)}"
            )
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if not 0.0 <= self.P_J <= 1.0:
            raise ValueError("P_J must be in [0, 1]")
        if self.warmup_epochs < 0 or self.total_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1 or self.d_iters_K < 1:
            raise ValueError("batch_size and d_iters_K must be >= 1")
        if self.lambda_l1 < 0:
            raise ValueError("lambda_l1 must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1 when set")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def toy(cls, **overrides) -> "SeganConfig":
        """Desk-scale configuration: 1024-sample windows, four encoder layers."""
        base = dict(window_len=1024, enc_channels=TOY_CHANNELS, batch_size=16)
        base.update(overrides)
        return cls(**base)

    @property
    def num_layers(self) -> int:
        return len(self.enc_channels)

    @property
    def bottleneck_len(self) -> int:
        return self.window_len // self.stride**self.num_layers

    @property
    def latent_dim(self) -> tuple[int, int]:
        return self.bottleneck_len, self.latent_channels or self.enc_channels[-1]

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def encoder_shapes(self) -> list[tuple[int, int]]:
        return [(self.window_len // self.stride ** (i + 1), c) for i, c in enumerate(self.enc_channels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeganConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class Params(dict):
    """Named parameter tensors of one network."""

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, v in self.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k!r}")
            if arrays[k].shape != v.shape:
                raise ValueError(f"parameter {k!r}: shape {arrays[k].shape}, expected {v.shape}")
            v.data = np.array(arrays[k], dtype=v.dtype)

    def count(self) -> int:
        return int(sum(v.data.size for v in self.values()))

    def zero_grad(self):
        for v in self.values():
            v.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: v.grad for k, v in self.items()}


class GeneratorParams(Params):
    pass


class DiscriminatorParams(Params):
    pass


def _param(value, name) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def decoder_channels(cfg: SeganConfig) -> list[tuple[int, int]]:
    """(input, output) channels of each decoder layer, bottleneck first."""
    enc = cfg.enc_channels
    lat = cfg.latent_dim[1]
    out = []
    c_in = enc[-1] + lat
    for j in range(cfg.num_layers):
        c_out = enc[-2 - j] if j < cfg.num_layers - 1 else 1
        out.append((c_in, c_out))
        c_in = 2 * c_out
    return out


def build_generator(cfg: SeganConfig, seed: int = 0) -> GeneratorParams:
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    w = cfg.filter_width
    p = GeneratorParams()
    c_in = 1
    for i, c in enumerate(cfg.enc_channels):
        p[f"enc{i}.w"] = _param(truncated_normal(rng, (w, c_in, c), dtype=dt), f"enc{i}.w")
        p[f"enc{i}.b"] = _param(np.zeros(c, dt), f"enc{i}.b")
        p[f"enc{i}.alpha"] = _param(np.zeros(c, dt), f"enc{i}.alpha")
        c_in = c
    last = cfg.num_layers - 1
    for j, (ci, co) in enumerate(decoder_channels(cfg)):
        p[f"dec{j}.w"] = _param(truncated_normal(rng, (w, co, ci), dtype=dt), f"dec{j}.w")
        p[f"dec{j}.b"] = _param(np.zeros(co, dt), f"dec{j}.b")
        if j < last:
            p[f"dec{j}.alpha"] = _param(np.zeros(co, dt), f"dec{j}.alpha")
    return p


def _as_batch(x, cfg: SeganConfig, what: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=cfg.np_dtype))
    if t.ndim == 1:
        t = reshape(t, (1, t.shape[0]))
    if t.ndim != 2 or t.shape[1] != cfg.window_len:
        raise ValueError(f"{what}: expected (batch, {cfg.window_len}) samples, got {t.shape}")
    return t


def sample_latent(rng: np.random.Generator, cfg: SeganConfig, batch: int = 1) -> np.ndarray:
    return rng.standard_normal((batch, *cfg.latent_dim)).astype(cfg.np_dtype)


def generator_forward(p: GeneratorParams, noisy, z, cfg: SeganConfig, trace: list | None = None) -> Tensor:
    """Enhance a batch of windows: (B, window_len) -> (B, window_len).

    ``trace``, if given, receives every intermediate feature shape (encoder
    outputs, the bottleneck concatenation, decoder outputs).
    """
    x = _as_batch(noisy, cfg, "generator input")
    b = x.shape[0]
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=cfg.np_dtype))
    if z.shape != (b, *cfg.latent_dim):
        raise ValueError(f"latent must have shape {(b, *cfg.latent_dim)}, got {z.shape}")
    h = reshape(x, (b, cfg.window_len, 1))
    skips = []
    for i in range(cfg.num_layers):
        h = conv1d(h, p[f"enc{i}.w"], p[f"enc{i}.b"], cfg.stride)
        h = prelu(h, p[f"enc{i}.alpha"])
        skips.append(h)
        if trace is not None:
            trace.append(("enc", h.shape[1:]))
    h = concat([h, z], axis=2)
    if trace is not None:
        trace.append(("bottleneck", h.shape[1:]))
    last = cfg.num_layers - 1
    for j in range(cfg.num_layers):
        h = tconv1d(h, p[f"dec{j}.w"], p[f"dec{j}.b"], cfg.stride)
        if j < last:
            h = prelu(h, p[f"dec{j}.alpha"])
            if trace is not None:
                trace.append(("dec", h.shape[1:]))
            h = concat([h, skips[last - 1 - j]], axis=2)
        else:
            h = tanh(h)
            if trace is not None:
                trace.append(("dec", h.shape[1:]))
    out = reshape(h, (b, cfg.window_len))
    if cfg.residual_skip:
        out = out + x
    return out


def build_discriminator(cfg: SeganConfig, seed: int = 0) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    w = cfg.filter_width
    p = DiscriminatorParams()
    c_in = 2
    for i, c in enumerate(cfg.enc_channels):
        p[f"conv{i}.w"] = _param(truncated_normal(rng, (w, c_in, c), dtype=dt), f"conv{i}.w")
        p[f"conv{i}.b"] = _param(np.zeros(c, dt), f"conv{i}.b")
        p[f"vbn{i}.gain"] = _param(np.ones(c, dt), f"vbn{i}.gain")
        p[f"vbn{i}.bias"] = _param(np.zeros(c, dt), f"vbn{i}.bias")
        c_in = c
    p["out.w"] = _param(truncated_normal(rng, (1, c_in, 1), dtype=dt), "out.w")
    p["out.b"] = _param(np.zeros(1, dt), "out.b")
    p["fc.w"] = _param(truncated_normal(rng, (cfg.bottleneck_len, 1), dtype=dt), "fc.w")
    p["fc.b"] = _param(np.zeros(1, dt), "fc.b")
    return p


def _d_input(candidate, condition, cfg: SeganConfig) -> Tensor:
    cand = _as_batch(candidate, cfg, "discriminator candidate")
    cond = _as_batch(condition, cfg, "discriminator condition")
    if cand.shape != cond.shape:
        raise ValueError(f"candidate {cand.shape} and condition {cond.shape} differ")
    b = cand.shape[0]
    return concat([reshape(cand, (b, cfg.window_len, 1)), reshape(cond, (b, cfg.window_len, 1))], axis=2)


def vbn_reference(p: DiscriminatorParams, clean, noisy, cfg: SeganConfig) -> list[RefStats]:
    """Per-layer statistics of the reference batch (real pairs), normalized by themselves."""
    with no_grad():
        h = _d_input(clean, noisy, cfg)
        stats = []
        for i in range(cfg.num_layers):
            h = conv1d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], cfg.stride)
            ref = batch_stats(h.data.astype(np.float64))
            stats.append(ref)
            h = virtual_batch_norm(h, ref, p[f"vbn{i}.gain"], p[f"vbn{i}.bias"], include_current=False)
            h = leaky_relu(h, cfg.d_alpha)
    return stats


def discriminator_forward(p: DiscriminatorParams, candidate, condition, vbn_ref, cfg: SeganConfig) -> Tensor:
    """Real-valued score per example, shape (B,); no output nonlinearity."""
    if vbn_ref is None or len(vbn_ref) != cfg.num_layers:
        raise ValueError("discriminator needs one set of VBN reference statistics per layer")
    h = _d_input(candidate, condition, cfg)
    b = h.shape[0]
    for i in range(cfg.num_layers):
        h = conv1d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], cfg.stride)
        h = virtual_batch_norm(
            h, vbn_ref[i], p[f"vbn{i}.gain"], p[f"vbn{i}.bias"], include_current=cfg.vbn_include_current
        )
        h = leaky_relu(h, cfg.d_alpha)
    h = conv1d(h, p["out.w"], p["out.b"], 1)
    h = reshape(h, (b, cfg.bottleneck_len))
    return reshape(dense(h, p["fc.w"], p["fc.b"]), (b,))
