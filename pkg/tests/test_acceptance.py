"""Acceptance criteria. Each test records one PASS/FAIL line (shown in the terminal summary)."""

from __future__ import annotations

import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from helpers import FS, sine_in_noise, write_pcm
from wavrefine.audio import Waveform, read_wav, write_wav
from wavrefine.autograd import (
    RefStats,
    Tensor,
    concat,
    conv1d,
    dense,
    grad_check,
    leaky_relu,
    load_checkpoint,
    prelu,
    tanh,
    tconv1d,
    virtual_batch_norm,
)
from wavrefine.dataset import chunk_inference, chunk_training, estimate_delay, stitch
from wavrefine.dsp import DEFAULT_CHAIN, pre_enhance, wiener_enhance
from wavrefine.metrics import lsd, ssnr, stoi
from wavrefine.model import SeganConfig, build_generator, generator_forward, sample_latent
from wavrefine.synthetic import add_white_noise, multisine_speech, toy_corpus
from wavrefine.trainer import (
    TrainSchedule,
    TrainState,
    TrainingData,
    d_loss,
    enhance,
    g_loss,
    read_loss_log,
    select_reference,
    train,
)


# --- 1. shape conformance -------------------------------------------------------

PAPER_ENCODER = [(8192, 16), (4096, 32), (2048, 32), (1024, 64), (512, 64), (256, 128), (128, 128), (64, 256), (32, 256), (16, 512), (8, 1024)]


def test_ac01_shape_conformance(acceptance):
    t0 = time.perf_counter()
    cfg = SeganConfig()
    g = build_generator(cfg, seed=0)
    trace = []
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (1, 16384)).astype(np.float32)
    out = generator_forward(g, x, sample_latent(np.random.default_rng(1), cfg, 1), cfg, trace=trace)
    elapsed = time.perf_counter() - t0
    enc = [s for kind, s in trace if kind == "enc"]
    dec = [s for kind, s in trace if kind == "dec"]
    bottleneck = [s for kind, s in trace if kind == "bottleneck"]
    mirror = [(n, c) for n, c in reversed(PAPER_ENCODER[:-1])] + [(16384, 1)]
    ok = enc == PAPER_ENCODER and bottleneck == [(8, 2048)] and dec == mirror and out.shape == (1, 16384) and elapsed < 10
    acceptance(1, "shape conformance", ok, f"encoder {'match' if enc == PAPER_ENCODER else enc}, bottleneck {bottleneck[0]}, output {out.shape[1]}, {elapsed:.1f} s")
    assert ok


# --- 2. gradient suite -----------------------------------------------------------


def _grad_cases(rng):
    x = rng.standard_normal((2, 12, 3))
    away = np.where(np.abs(x) < 0.05, 0.3, x)  # keep clear of the activation kinks
    ref = RefStats.from_mean_var(rng.standard_normal(4) * 0.1, rng.uniform(0.5, 2.0, 4), 8)
    return {
        "conv1d": (lambda x, k, b: conv1d(x, k, b, stride=2), dict(x=x, k=rng.standard_normal((5, 3, 4)), b=rng.standard_normal(4))),
        "conv1d_s1": (lambda x, k: conv1d(x, k, stride=1), dict(x=x, k=rng.standard_normal((4, 3, 2)))),
        "tconv1d": (lambda x, k, b: tconv1d(x, k, b, stride=2), dict(x=x, k=rng.standard_normal((5, 4, 3)), b=rng.standard_normal(4))),
        "prelu": (lambda x, a: prelu(x, a), dict(x=away, a=rng.uniform(0.05, 0.5, 3))),
        "leaky_relu": (lambda x: leaky_relu(x, 0.3), dict(x=away)),
        "virtual_batch_norm": (
            lambda x, g, b: virtual_batch_norm(x, ref, g, b),
            dict(x=rng.standard_normal((3, 10, 4)), g=rng.uniform(0.5, 1.5, 4), b=rng.standard_normal(4)),
        ),
        "dense": (lambda x, w, b: dense(x, w, b), dict(x=rng.standard_normal((3, 6)), w=rng.standard_normal((6, 2)), b=rng.standard_normal(2))),
        "composite": (
            lambda x, k1, a, k2: tanh(tconv1d(prelu(conv1d(x, k1, stride=2), a), k2, stride=2)),
            dict(x=x, k1=rng.standard_normal((5, 3, 4)) * 0.5, a=rng.uniform(0.1, 0.3, 4), k2=rng.standard_normal((5, 2, 4)) * 0.5),
        ),
    }


def _corrupted_square(x):
    # analytic gradient deliberately 5% too large
    return Tensor.from_op(x.data**2, (x,), lambda g: (2.1 * g * x.data,), "bad_square")


def test_ac02_gradient_suite(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = {}
    for name, (fn, inputs) in _grad_cases(rng).items():
        worst[name] = grad_check(fn, inputs, tolerance=1e-4, seed=3).worst
    corrupted = grad_check(_corrupted_square, dict(x=rng.uniform(0.5, 1.5, (4, 3))), seed=4).worst
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and corrupted > 1e-2 and elapsed < 60
    acceptance(2, "gradient suite", ok, f"max rel err {max(worst.values()):.1e} over {len(worst)} checks, corrupted {corrupted:.1e}, {elapsed:.1f} s")
    assert ok, worst


# --- 3. adjoint identity ---------------------------------------------------------


def test_ac03_adjoint_identity(acceptance):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 4))
        stride = int(rng.choice([1, 2, 4]))
        n_out = int(rng.integers(1, 40))
        n = n_out * stride
        ci, co = (int(v) for v in rng.integers(1, 6, 2))
        width = int(rng.integers(1, 32))
        k = Tensor(rng.standard_normal((width, ci, co)))
        x = rng.standard_normal((b, n, ci))
        y = rng.standard_normal((b, n_out, co))
        lhs = np.sum(conv1d(Tensor(x), k, stride=stride).data * y)
        rhs = np.sum(x * tconv1d(Tensor(y), k, stride=stride).data)
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= 1e-8
    acceptance(3, "adjoint identity", ok, f"max |<Ax,y> - <x,A'y>| = {worst:.1e} over 100 cases")
    assert ok


# --- 4. schedule truth table -----------------------------------------------------


def _expected_pre(i, J, P_J, epoch, warmup):
    return epoch < warmup and Fraction(1) - Fraction(i, J) <= Fraction(P_J)


def test_ac04_schedule_truth_table(acceptance):
    clean, pre = object(), object()
    warmup = 50
    rows = mismatches = 0
    for J in (1, 2, 4):
        for P_J in (0.0, 0.25, 0.5, 1.0):
            sched = TrainSchedule(J=J, P_J=P_J, warmup_epochs=warmup)
            for epoch in (0, warmup - 1, warmup):
                for i in range(J):
                    got = select_reference(i, epoch, sched, clean, pre)
                    rows += 1
                    mismatches += got is not (pre if _expected_pre(i, J, P_J, epoch, warmup) else clean)
    paper = TrainSchedule(J=2, P_J=0.5, warmup_epochs=50)
    paper_ok = (
        select_reference(0, 10, paper, clean, pre) is clean
        and select_reference(1, 10, paper, clean, pre) is pre
        and all(select_reference(i, e, paper, clean, pre) is clean for i in range(2) for e in (50, 60, 119))
    )
    ok = mismatches == 0 and paper_ok
    acceptance(4, "schedule truth table", ok, f"{rows - mismatches}/{rows} grid rows match, paper case {'ok' if paper_ok else 'wrong'}")
    assert ok


# --- 5. loss identities ------------------------------------------------------------


def test_ac05_loss_identities(acceptance):
    rng = np.random.default_rng(5)
    gen, ref = rng.standard_normal((4, 64)), rng.standard_normal((4, 64))
    mad = np.mean(np.abs(gen - ref))
    checks = {
        "d(1,0)=0": d_loss(np.ones(4), np.zeros(4)).item() == 0.0,
        "d(0,1)=1": d_loss(np.zeros(4), np.ones(4)).item() == 1.0,
        "g(1,x,x)=0": g_loss(np.ones(4), gen, gen.copy(), 100.0).item() == 0.0,
    }
    base = g_loss(np.full(4, 0.3), gen, ref, 0.0).item()
    slopes = [(g_loss(np.full(4, 0.3), gen, ref, lam).item() - base) / lam for lam in (0.5, 1.0, 10.0, 100.0)]
    checks["slope=mean|diff|"] = all(abs(s - mad) <= 1e-12 * max(1.0, mad) * 100 for s in slopes)
    ok = all(checks.values())
    acceptance(5, "loss identities", ok, ", ".join(f"{k} {'ok' if v else 'wrong'}" for k, v in checks.items()))
    assert ok


# --- 6. residual identity ------------------------------------------------------------


def test_ac06_residual_identity(acceptance):
    cfg = SeganConfig.toy()
    g = build_generator(cfg, seed=6)
    last = cfg.num_layers - 1
    g[f"dec{last}.w"].data[...] = 0
    g[f"dec{last}.b"].data[...] = 0
    rng = np.random.default_rng(6)
    lengths = [1, 500, 1024, 1025, 4096, 7777]
    exact = 0
    for n in lengths:
        w = Waveform(rng.uniform(-1, 1, n), FS)
        exact += np.array_equal(enhance(w, g, cfg, seed=1).samples, w.samples)
    ok = exact == len(lengths)
    acceptance(6, "residual identity", ok, f"{exact}/{len(lengths)} waveforms returned bit-exactly")
    assert ok


# --- 7. toy training convergence -------------------------------------------------------

TOY_EPOCHS, TOY_WARMUP, TOY_STEPS = 8, 2, 30  # 240 steps, warm-up 25% of epochs


def toy_training_data(pairs, window=1024) -> TrainingData:
    parts = ([], [], [])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for clean, noisy in pairs:
            for acc, w in zip(parts, (clean, noisy, pre_enhance(noisy))):
                acc.append(chunk_training(w, window, window // 2).chunks)
    return TrainingData(*(np.concatenate(p).astype(np.float32) for p in parts))


def _held_out_scores(g, cfg, held):
    l1, gain = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for clean, noisy in held:
            out = enhance(noisy, g, cfg, seed=0)
            l1.append(np.mean(np.abs(out.samples - clean.samples)))
            gain.append(ssnr(clean, out) - ssnr(clean, noisy))
    return float(np.mean(l1)), float(np.mean(gain))


def run_toy_seed(seed: int, out_dir) -> dict:
    t0 = time.perf_counter()
    data = toy_training_data(toy_corpus(200, seed=seed))
    held = toy_corpus(20, seed=1000 + seed)
    cfg = SeganConfig.toy(total_epochs=TOY_EPOCHS, warmup_epochs=TOY_WARMUP, steps_per_epoch=TOY_STEPS, J=2, P_J=0.5, d_iters_K=1)
    l1_before, _ = _held_out_scores(TrainState.initial(cfg, data, seed).g, cfg, held)
    state = train(data, cfg, out_dir, seed=seed)
    rows = read_loss_log(out_dir / "losses.csv")
    l1_after, ssnr_gain = _held_out_scores(state.g, cfg, held)
    finite = all(np.isfinite(v) for r in rows for v in r.values())
    elapsed = time.perf_counter() - t0
    drop = 1 - l1_after / l1_before
    return dict(
        seed=seed,
        steps=state.global_step,
        drop=drop,
        gain=ssnr_gain,
        finite=finite,
        seconds=elapsed,
        ok=drop >= 0.5 and ssnr_gain >= 2.0 and finite and state.global_step <= 2000 and elapsed < 900,
    )


@pytest.mark.slow
def test_ac07_toy_training_convergence(acceptance, tmp_path):
    results = [run_toy_seed(seed, tmp_path / f"seed{seed}") for seed in range(5)]
    passed = sum(r["ok"] for r in results)
    per_seed = "; ".join(
        f"s{r['seed']}: L1 -{100 * r['drop']:.0f}% SSNR +{r['gain']:.1f} dB {r['steps']} steps {r['seconds']:.0f} s{'' if r['ok'] else ' FAIL'}"
        for r in results
    )
    ok = passed >= 4
    acceptance(7, "toy training convergence", ok, f"{passed}/5 seeds pass ({per_seed})")
    assert ok


# --- 8. pre-enhancement efficacy -------------------------------------------------------


def test_ac08_pre_enhancement_efficacy(acceptance):
    clean, noisy = sine_in_noise(snr_db=0.0, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        improvement = ssnr(clean, wiener_enhance(noisy)) - ssnr(clean, noisy)
        speech = multisine_speech(np.random.default_rng(8), 3.0, pause_s=0.3)
        kept = stoi(speech, pre_enhance(speech, DEFAULT_CHAIN))
    ok = improvement >= 3.0 and kept >= 0.95
    acceptance(8, "pre-enhancement efficacy", ok, f"wiener SSNR +{improvement:.1f} dB on 0 dB sine, chain STOI on clean {kept:.3f}")
    assert ok


# --- 9. metric oracles -------------------------------------------------------------------


def test_ac09_metric_oracles(acceptance):
    rng = np.random.default_rng(9)
    x = Waveform(0.1 * rng.standard_normal(3 * FS), FS)
    speech = multisine_speech(rng, 3.0, pause_s=0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        checks = {
            "ssnr self": ssnr(x, x) == 35.0,
            "equal-energy 0 dB": abs(ssnr(x, x.with_samples(2 * x.samples))) <= 0.01,
            "lsd self": lsd(x, x) == 0.0,
            "lsd gain 2": abs(lsd(x, x.with_samples(2 * x.samples)) - 20 * np.log10(2)) <= 0.01,
            "stoi self": stoi(speech, speech) >= 0.99,
            "stoi noise": max(stoi(speech, Waveform(0.1 * np.random.default_rng(s).standard_normal(len(speech)), FS)) for s in range(10)) <= 0.3,
        }
        sweep = [stoi(speech, add_white_noise(speech, snr, np.random.default_rng(99))) for snr in (-10, 0, 10)]
    checks["stoi sweep"] = sweep[0] < sweep[1] < sweep[2]
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    acceptance(9, "metric oracles", ok, f"{len(checks) - len(failed)}/{len(checks)} oracles hold" + (f", failed: {failed}" if failed else f", sweep {[round(s, 3) for s in sweep]}"))
    assert ok


# --- 10. pipeline round trips ---------------------------------------------------------------


def test_ac10_pipeline_round_trips(acceptance, tmp_path):
    rng = np.random.default_rng(10)
    pcm = rng.integers(-32768, 32768, 12345)
    src = write_pcm(tmp_path / "in.wav", pcm)
    write_wav(read_wav(src), tmp_path / "out.wav", scale=32768.0)
    bytes_ok = src.read_bytes() == (tmp_path / "out.wav").read_bytes()

    stitched = 0
    for n in rng.integers(16384, 100001, 50):
        w = Waveform(rng.standard_normal(int(n)), FS)
        stitched += np.array_equal(stitch(chunk_inference(w, 16384)).samples, w.samples)

    base = rng.standard_normal(2 * FS)
    found = []
    for delay in (0, 1, 500, 1234):
        rec = np.concatenate([np.zeros(delay), base])[: len(base)]
        for noisy in (False, True):
            r = rec + np.sqrt(np.mean(base**2) / 10) * rng.standard_normal(len(rec)) if noisy else rec
            found.append(estimate_delay(Waveform(base, FS), Waveform(r, FS), max_lag=2000) == delay)
    ok = bytes_ok and stitched == 50 and all(found)
    acceptance(10, "pipeline round trips", ok, f"wav bytes {'identical' if bytes_ok else 'differ'}, stitch {stitched}/50, delays {sum(found)}/8")
    assert ok


# --- 11. determinism and resume --------------------------------------------------------------


def _small_run_cfg():
    return SeganConfig.toy(batch_size=4, total_epochs=3, warmup_epochs=1, steps_per_epoch=5)


def _small_data():
    return toy_training_data(toy_corpus(12, seed=11, dur=(1.0, 1.5)))


def _final_arrays(path):
    return load_checkpoint(path)[0]


def test_ac11_determinism_and_resume(acceptance, tmp_path):
    data, cfg = _small_data(), _small_run_cfg()
    train(data, cfg, tmp_path / "a", seed=11)
    train(data, cfg, tmp_path / "b", seed=11)
    a, b = _final_arrays(tmp_path / "a" / "latest.wrckpt"), _final_arrays(tmp_path / "b" / "latest.wrckpt")
    identical = a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    identical &= (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()

    train(data, cfg, tmp_path / "c", seed=11, epochs=1)
    resumed = train(data, cfg, tmp_path / "c", resume=tmp_path / "c" / "epoch0001.wrckpt")
    c = _final_arrays(tmp_path / "c" / "latest.wrckpt")
    further = resumed.global_step - 5
    resume_ok = all(np.array_equal(a[k], c[k]) for k in a) and further >= 10
    resume_ok &= (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "c" / "losses.csv").read_bytes()
    ok = identical and resume_ok
    acceptance(11, "determinism and resume", ok, f"repeat run {'bit-identical' if identical else 'differs'}, resume over {further} steps {'bit-exact' if resume_ok else 'differs'}")
    assert ok
