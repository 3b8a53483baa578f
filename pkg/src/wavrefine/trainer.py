"""Least-squares GAN training with an L1 term and a directed-reference schedule.

Each step makes ``K`` discriminator updates followed by ``J`` generator
updates. During the warm-up epochs some generator iterations regress towards
the pre-enhanced signal B(noisy) instead of the clean one.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from wavrefine.audio import Waveform
from wavrefine.autograd import (
    NonFiniteError,
    RmspropState,
    Tensor,
    absolute,
    load_checkpoint,
    mean,
    no_grad,
    rmsprop_step,
    save_checkpoint,
    square,
)
from wavrefine.dataset import chunk_inference, read_chunk_cache, stitch
from wavrefine.model import (
    DiscriminatorParams,
    GeneratorParams,
    SeganConfig,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    sample_latent,
    vbn_reference,
)

log = logging.getLogger(__name__)

LOSS_HEADER = ["epoch", "step", "d_loss", "g_adv", "g_l1", "ref_pre_enhanced_frac"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSchedule:
    J: int = 2
    P_J: float = 0.5
    warmup_epochs: int = 50
    d_iters_K: int = 1
    stochastic: bool = False

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if not 0.0 <= self.P_J <= 1.0:
            raise ValueError("P_J must be in [0, 1]")
        if self.warmup_epochs < 0 or self.d_iters_K < 1:
            raise ValueError("warmup_epochs must be >= 0 and d_iters_K >= 1")

    @classmethod
    def from_config(cls, cfg: SeganConfig) -> "TrainSchedule":
        return cls(cfg.J, cfg.P_J, cfg.warmup_epochs, cfg.d_iters_K, cfg.stochastic_schedule)


def uses_pre_enhanced(i: int, epoch: int, sched: TrainSchedule, rng: np.random.Generator | None = None) -> bool:
    """Whether generator iteration ``i`` of ``epoch`` regresses towards B(noisy).

    Deterministic rule: during warm-up, iff ``1 - i/J <= P_J``. In stochastic
    mode each warm-up iteration instead draws Bernoulli(P_J) from ``rng``.
    """
    if not 0 <= i < sched.J:
        raise ValueError(f"generator iteration {i} outside [0, {sched.J})")
    if epoch >= sched.warmup_epochs:
        return False
    if sched.stochastic:
        if rng is None:
            raise ValueError("stochastic schedule needs an rng")
        return bool(rng.random() < sched.P_J)
    # 1 - i/J <= P_J, kept in integers on the left to avoid rounding at the boundary
    return sched.J - i <= sched.P_J * sched.J


def select_reference(i: int, epoch: int, sched: TrainSchedule, clean, pre_enhanced, rng=None):
    return pre_enhanced if uses_pre_enhanced(i, epoch, sched, rng) else clean


def d_loss(d_real, d_fake) -> Tensor:
    """0.5 * mean((D(real) - 1)^2) + 0.5 * mean(D(fake)^2)."""
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(np.atleast_1d(np.asarray(d_real, dtype=float)))
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(np.atleast_1d(np.asarray(d_fake, dtype=float)))
    return 0.5 * mean(square(d_real - 1.0)) + 0.5 * mean(square(d_fake))


def g_loss_terms(d_fake, generated, reference, lam: float) -> tuple[Tensor, Tensor, Tensor]:
    """(total, adversarial, L1) with total = mean((D(fake) - 1)^2) + lam * mean|generated - reference|."""
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(np.atleast_1d(np.asarray(d_fake, dtype=float)))
    generated = generated if isinstance(generated, Tensor) else Tensor(generated)
    reference = reference if isinstance(reference, Tensor) else Tensor(np.asarray(reference, dtype=generated.dtype))
    if generated.shape != reference.shape:
        raise ValueError(f"generated {generated.shape} and reference {reference.shape} differ")
    adv = mean(square(d_fake - 1.0))
    l1 = mean(absolute(generated - reference))
    return adv + lam * l1, adv, l1


def g_loss(d_fake, generated, reference, lam: float) -> Tensor:
    return g_loss_terms(d_fake, generated, reference, lam)[0]


@dataclass
class TrainingData:
    """Aligned training windows: clean x, degraded x~ and pre-enhanced B(x~)."""

    clean: np.ndarray
    noisy: np.ndarray
    pre: np.ndarray

    def __post_init__(self):
        if not (self.clean.shape == self.noisy.shape == self.pre.shape) or self.clean.ndim != 2:
            raise ValueError("clean/noisy/pre chunk arrays must share one (count, window) shape")

    def __len__(self):
        return self.clean.shape[0]

    @classmethod
    def from_cache(cls, cache_dir) -> "TrainingData":
        cache_dir = Path(cache_dir)
        arrays = []
        for name in ("clean", "noisy", "pre"):
            path = cache_dir / f"{name}.wrchnk"
            if not path.exists():
                raise FileNotFoundError(f"{path} missing; run `prepare` first")
            arrays.append(read_chunk_cache(path)[0])
        return cls(*arrays)


@dataclass
class StepLosses:
    d_loss: float
    g_adv: float
    g_l1: float
    ref_pre_frac: float


@dataclass
class TrainState:
    cfg: SeganConfig
    seed: int
    g: GeneratorParams
    d: DiscriminatorParams
    g_opt: RmspropState
    d_opt: RmspropState
    rng: np.random.Generator
    ref_clean: np.ndarray
    ref_noisy: np.ndarray
    epoch: int = 0
    step_in_epoch: int = 0
    global_step: int = 0
    g_updates: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: SeganConfig, data: TrainingData, seed: int = 0) -> "TrainState":
        g = build_generator(cfg, seed)
        d = build_discriminator(cfg, seed + 1)
        ref_size = cfg.vbn_ref_size or cfg.batch_size
        pick = np.random.default_rng([seed, 7]).choice(len(data), size=min(ref_size, len(data)), replace=False)
        dt = cfg.np_dtype
        return cls(
            cfg,
            seed,
            g,
            d,
            RmspropState(cfg.learning_rate),
            RmspropState(cfg.learning_rate),
            np.random.default_rng([seed, 11]),
            data.clean[np.sort(pick)].astype(dt),
            data.noisy[np.sort(pick)].astype(dt),
        )

    def to_arrays(self) -> tuple[dict, dict]:
        arrays = {}
        for prefix, params in (("g/", self.g), ("d/", self.d)):
            arrays.update({prefix + k: v for k, v in params.arrays().items()})
        for prefix, opt in (("gopt/", self.g_opt), ("dopt/", self.d_opt)):
            arrays.update({prefix + k: v for k, v in opt.accumulators.items()})
        arrays["vbn/ref_clean"] = self.ref_clean
        arrays["vbn/ref_noisy"] = self.ref_noisy
        meta = {
            "format": "wavrefine-train-state",
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "epoch": self.epoch,
            "step_in_epoch": self.step_in_epoch,
            "global_step": self.global_step,
            "g_updates": self.g_updates,
            "rng": self.rng.bit_generator.state,
            "g_opt": [self.g_opt.learning_rate, self.g_opt.decay, self.g_opt.epsilon],
            "d_opt": [self.d_opt.learning_rate, self.d_opt.decay, self.d_opt.epsilon],
        }
        return arrays, meta

    def save(self, path):
        arrays, meta = self.to_arrays()
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        arrays, meta = load_checkpoint(path)
        if meta.get("format") != "wavrefine-train-state":
            raise ValueError(f"{path}: not a training-state checkpoint")
        cfg = SeganConfig.from_dict(meta["config"])
        seed = meta["seed"]
        g = build_generator(cfg, seed)
        d = build_discriminator(cfg, seed + 1)
        g.load_arrays({k[2:]: v for k, v in arrays.items() if k.startswith("g/")})
        d.load_arrays({k[2:]: v for k, v in arrays.items() if k.startswith("d/")})
        g_opt = RmspropState(*meta["g_opt"], accumulators={k[5:]: v.copy() for k, v in arrays.items() if k.startswith("gopt/")})
        d_opt = RmspropState(*meta["d_opt"], accumulators={k[5:]: v.copy() for k, v in arrays.items() if k.startswith("dopt/")})
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        return cls(
            cfg,
            seed,
            g,
            d,
            g_opt,
            d_opt,
            rng,
            arrays["vbn/ref_clean"].copy(),
            arrays["vbn/ref_noisy"].copy(),
            meta["epoch"],
            meta["step_in_epoch"],
            meta["global_step"],
            meta["g_updates"],
        )


def _set_trainable(params, flag: bool):
    for t in params.values():
        t.requires_grad = flag


def _check(value: float, what: str, state: TrainState):
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite {what} at epoch {state.epoch}, step {state.global_step}")


def train_step(batch, state: TrainState, cfg: SeganConfig | None = None) -> tuple[TrainState, StepLosses]:
    """One adversarial step on ``batch = (clean, noisy, pre_enhanced)`` arrays of shape (B, window).

    Mutates and returns ``state`` together with the step's losses.
    """
    cfg = cfg or state.cfg
    sched = TrainSchedule.from_config(cfg)
    dt = cfg.np_dtype
    clean, noisy, pre = (np.asarray(a, dtype=dt) for a in batch)
    if clean.ndim != 2 or clean.shape[1] != cfg.window_len:
        raise ValueError(f"batch windows must be {cfg.window_len} samples, got {clean.shape}")
    b = clean.shape[0]
    g, d = state.g, state.d
    try:
        # discriminator: real pair (x, x~) against fake pair (G(x~), x~)
        _set_trainable(g, False)
        _set_trainable(d, True)
        ref = None
        for _ in range(sched.d_iters_K):
            if ref is None or cfg.vbn_refresh:
                ref = vbn_reference(d, state.ref_clean, state.ref_noisy, cfg)
            z = sample_latent(state.rng, cfg, b)
            with no_grad():
                fake = generator_forward(g, noisy, z, cfg).data
            d.zero_grad()
            loss_d = d_loss(discriminator_forward(d, clean, noisy, ref, cfg), discriminator_forward(d, fake, noisy, ref, cfg))
            _check(loss_d.item(), "discriminator loss", state)
            loss_d.backward()
            rmsprop_step(d, d.grads(), state.d_opt)

        # generator: J iterations, reference chosen per iteration
        _set_trainable(d, False)
        _set_trainable(g, True)
        d.zero_grad()
        ref = vbn_reference(d, state.ref_clean, state.ref_noisy, cfg)
        adv_sum = l1_sum = 0.0
        n_pre = 0
        for i in range(sched.J):
            use_pre = uses_pre_enhanced(i, state.epoch, sched, state.rng)
            n_pre += use_pre
            target = pre if use_pre else clean
            z = sample_latent(state.rng, cfg, b)
            g.zero_grad()
            enhanced = generator_forward(g, noisy, z, cfg)
            total, adv, l1 = g_loss_terms(discriminator_forward(d, enhanced, noisy, ref, cfg), enhanced, target, cfg.lambda_l1)
            _check(total.item(), "generator loss", state)
            adv_sum += adv.item()
            l1_sum += l1.item()
            total.backward()
            rmsprop_step(g, g.grads(), state.g_opt)
            state.g_updates += 1
    except NonFiniteError as exc:
        raise TrainingDiverged(f"{exc} at epoch {state.epoch}, step {state.global_step}") from exc
    finally:
        _set_trainable(g, True)
        _set_trainable(d, True)
        g.zero_grad()
        d.zero_grad()

    state.global_step += 1
    return state, StepLosses(loss_d.item(), adv_sum / sched.J, l1_sum / sched.J, n_pre / sched.J)


def steps_per_epoch(n_chunks: int, batch_size: int, cap: int | None = None) -> int:
    """``floor(n_chunks / batch_size)``, optionally capped (an epoch then sees a random subset)."""
    full = n_chunks // batch_size
    return full if cap is None else min(full, cap)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Chunk-level shuffle for one epoch; a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, 3, epoch]).permutation(n)


def checkpoint_name(epoch: int) -> str:
    return f"epoch{epoch:04d}.wrckpt"


def train(
    data: TrainingData,
    cfg: SeganConfig,
    output_dir,
    seed: int = 0,
    resume=None,
    epochs: int | None = None,
    max_steps: int | None = None,
    callback=None,
) -> TrainState:
    """Train for ``epochs`` (default ``cfg.total_epochs``), checkpointing after every epoch.

    The loss log ``losses.csv`` gets one row per step. ``resume`` is a
    checkpoint path; training continues from its epoch/step. ``max_steps``
    caps the total number of steps (counted across resumes).
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = TrainState.load(resume)
        cfg = state.cfg
    else:
        state = TrainState.initial(cfg, data, seed)
    total_epochs = cfg.total_epochs if epochs is None else epochs
    spe = steps_per_epoch(len(data), cfg.batch_size, cfg.steps_per_epoch)
    if spe == 0:
        raise ValueError(f"{len(data)} chunks cannot fill one batch of {cfg.batch_size}")

    log_path = output_dir / "losses.csv"
    if resume is None or not log_path.exists():
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(LOSS_HEADER)
    else:
        _truncate_log(log_path, state.global_step)

    with open(log_path, "a", newline="") as f:
        writer = csv.writer(f)
        while state.epoch < total_epochs:
            order = epoch_order(state.seed, state.epoch, len(data))
            while state.step_in_epoch < spe:
                if max_steps is not None and state.global_step >= max_steps:
                    return state
                idx = np.sort(order[state.step_in_epoch * cfg.batch_size : (state.step_in_epoch + 1) * cfg.batch_size])
                state, losses = train_step((data.clean[idx], data.noisy[idx], data.pre[idx]), state, cfg)
                state.step_in_epoch += 1
                writer.writerow(
                    [state.epoch, state.global_step, f"{losses.d_loss:.9g}", f"{losses.g_adv:.9g}", f"{losses.g_l1:.9g}", f"{losses.ref_pre_frac:.9g}"]
                )
                state.history.append(losses)
                if callback is not None:
                    callback(state, losses)
            f.flush()
            state.epoch += 1
            state.step_in_epoch = 0
            state.save(output_dir / checkpoint_name(state.epoch))
            state.save(output_dir / "latest.wrckpt")
            log.info("epoch %d done (%d steps)", state.epoch, state.global_step)
    return state


def _truncate_log(path: Path, steps: int):
    """Drop log rows past ``steps`` so a resumed run appends where the checkpoint left off."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOSS_HEADER)
        w.writerows(r for r in rows[1:] if int(r[1]) <= steps)


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def load_generator(checkpoint) -> tuple[GeneratorParams, SeganConfig]:
    """Generator parameters and config from a training-state or generator-only checkpoint."""
    arrays, meta = load_checkpoint(checkpoint)
    cfg = SeganConfig.from_dict(meta["config"])
    g = build_generator(cfg, 0)
    prefixed = any(k.startswith("g/") for k in arrays)
    g.load_arrays({k[2:]: v for k, v in arrays.items() if k.startswith("g/")} if prefixed else arrays)
    return g, cfg


def save_generator(path, g: GeneratorParams, cfg: SeganConfig):
    save_checkpoint(path, g.arrays(), {"format": "wavrefine-generator", "config": cfg.to_dict()})


def enhance(waveform: Waveform, checkpoint, cfg: SeganConfig | None = None, seed: int = 0, batch: int = 16) -> Waveform:
    """Enhance a 16 kHz waveform window by window and stitch the results.

    ``checkpoint`` is a path or a :class:`GeneratorParams`. The input residual
    is added in float64 outside the network, so a generator whose output
    is exactly zero returns the input unchanged.
    """
    if waveform.sample_rate_hz != 16000:
        raise ValueError(f"enhance expects 16 kHz input, got {waveform.sample_rate_hz} Hz")
    if isinstance(checkpoint, (str, Path)):
        g, ck_cfg = load_generator(checkpoint)
        cfg = cfg or ck_cfg
    else:
        g = checkpoint
        if cfg is None:
            raise ValueError("cfg is required with in-memory parameters")
    chunks = chunk_inference(waveform, cfg.window_len)
    net_cfg = replace(cfg, residual_skip=False)
    rng = np.random.default_rng(seed)
    out = np.empty_like(chunks.chunks)
    fixed = sample_latent(rng, cfg, 1) if cfg.fixed_z else None
    with no_grad():
        for s in range(0, len(chunks), batch):
            x = chunks.chunks[s : s + batch]
            z = np.repeat(fixed, len(x), axis=0) if fixed is not None else sample_latent(rng, cfg, len(x))
            y = generator_forward(g, x.astype(cfg.np_dtype), z, net_cfg).data.astype(np.float64)
            out[s : s + batch] = y + x if cfg.residual_skip else y
    return stitch(replace(chunks, chunks=out))
