from __future__ import annotations

import csv
import logging
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import FS, write_corpus
from wavrefine.audio import Waveform, read_wav, write_wav
from wavrefine.dataset import read_manifest
from wavrefine.metrics import (
    MetricReport,
    evaluate_corpus,
    format_table,
    lsd,
    ssnr,
    ssnr_frames,
    stoi,
    stoi_resample,
    third_octave_bands,
)
from wavrefine.synthetic import add_white_noise, multisine_speech


@pytest.fixture
def speech():
    return multisine_speech(np.random.default_rng(7), 3.0, pause_s=0.3)


def test_ssnr_reference_values(speech):
    assert ssnr(speech, speech) == 35.0
    assert ssnr(speech, speech.with_samples(2 * speech.samples)) == pytest.approx(0.0, abs=1e-9)
    assert ssnr(speech, speech.with_samples(-speech.samples)) == pytest.approx(-20 * np.log10(2), abs=1e-9)
    assert ssnr(speech, speech.with_samples(np.zeros(len(speech)))) == pytest.approx(0.0, abs=1e-9)


def test_ssnr_clamps_and_skips_silence(speech, rng):
    frames = ssnr_frames(speech, speech.with_samples(speech.samples + rng.standard_normal(len(speech))))
    assert frames.min() >= -10 and frames.max() <= 35
    # a lead of whole hops adds only silent frames, which are all dropped
    padded = Waveform(np.concatenate([np.zeros(64 * 256), speech.samples]), FS)
    assert np.array_equal(ssnr_frames(padded, padded), ssnr_frames(speech, speech))


def test_ssnr_errors(speech):
    with pytest.raises(ValueError, match="length"):
        ssnr(speech, Waveform(speech.samples[:-1], FS))
    with pytest.raises(ValueError, match="silence"):
        ssnr(Waveform(np.zeros(FS), FS), Waveform(np.zeros(FS), FS))
    with pytest.raises(ValueError, match="rate"):
        ssnr(speech, Waveform(speech.samples, 8000))


def test_ssnr_handles_input_shorter_than_a_frame():
    x = Waveform(0.5 * np.ones(100), FS)
    assert ssnr(x, x) == 35.0


def test_third_octave_bands_cover_speech_range():
    obm = third_octave_bands()
    assert obm.shape == (15, 257)
    assert set(np.unique(obm)) <= {0.0, 1.0}
    assert np.all(obm.sum(axis=0) <= 1)
    first = np.flatnonzero(obm.sum(axis=0))
    assert first.min() * 10000 / 512 >= 100 and first.max() * 10000 / 512 <= 4500


def test_stoi_resample_passes_through_at_target_rate(rng):
    x = rng.standard_normal(1000)
    assert np.array_equal(stoi_resample(x, 10000), x)
    assert len(stoi_resample(np.zeros(16000), 16000)) == 10000


def test_stoi_identical_and_degrading(speech):
    assert stoi(speech, speech) == pytest.approx(1.0, abs=1e-9)
    scores = [stoi(speech, add_white_noise(speech, snr, np.random.default_rng(0))) for snr in (20, 5, -5)]
    assert scores[0] > scores[1] > scores[2]
    assert 0.0 <= scores[2] <= 1.0


def test_stoi_matches_reference_implementation():
    pystoi = pytest.importorskip("pystoi")
    for seed in range(3):
        r = np.random.default_rng(seed)
        clean = multisine_speech(r, 3.0, pause_s=0.3)
        noisy = clean.samples + 0.1 * r.standard_normal(len(clean))
        assert abs(stoi(clean, Waveform(noisy, FS)) - pystoi.stoi(clean.samples, noisy, FS)) <= 1e-6


def test_stoi_warnings_and_errors(speech):
    short = Waveform(speech.samples[: int(0.4 * FS)], FS)
    with pytest.warns(RuntimeWarning, match="3 s"):
        with pytest.raises(ValueError, match="non-silent frames"):
            stoi(short, short)
    with pytest.raises(ValueError):
        stoi(speech, Waveform(speech.samples[:-5], FS))


def test_lsd_properties(speech, rng):
    noisy = speech.with_samples(speech.samples + 0.05 * rng.standard_normal(len(speech)))
    assert lsd(speech, speech) == 0.0
    assert lsd(speech, noisy) == pytest.approx(lsd(noisy, speech), abs=1e-12)
    # a uniform gain of 2 shifts every log bin by 20*log10(2)
    loud = noisy.with_samples(2 * noisy.samples)
    assert lsd(noisy, loud) == pytest.approx(20 * np.log10(2), abs=1e-3)


def test_report_csv_and_statistics(tmp_path):
    r = MetricReport("x", [("a", 1.0, 0.5, 2.0), ("b", 3.0, 0.7, 4.0)])
    assert r.mean == {"ssnr_db": 2.0, "stoi": pytest.approx(0.6), "lsd_db": 3.0}
    assert r.std["ssnr_db"] == 1.0
    r.write_csv(tmp_path / "x.csv")
    rows = list(csv.reader(open(tmp_path / "x.csv")))
    assert rows[0] == ["utt_id", "ssnr_db", "stoi", "lsd_db"]
    assert [row[0] for row in rows[1:]] == ["a", "b", "mean", "std"]
    assert float(rows[3][1]) == 2.0
    assert np.isnan(MetricReport("empty").mean["stoi"])


@given(st.permutations(list(range(6))))
def test_report_mean_is_order_invariant(order):
    rows = [(f"u{i}", 0.1 * i**2, 0.9 - 0.01 * i, 3.3 * i) for i in range(6)]
    base = MetricReport("s", rows).mean
    shuffled = MetricReport("s", [rows[i] for i in order]).mean
    assert base == shuffled


def test_format_table_lists_each_system():
    table = format_table({"noisy": MetricReport("noisy", [("a", 1.0, 0.5, 2.0)]), "ours": MetricReport("ours", [("a", 9.0, 0.9, 1.0)])})
    lines = table.splitlines()
    assert lines[0].startswith("system") and "STOI" in lines[0]
    assert lines[2].startswith("noisy") and lines[3].startswith("ours")


@pytest.fixture
def corpus(tmp_path):
    pairs = []
    for seed in range(3):
        r = np.random.default_rng(seed)
        clean = multisine_speech(r, 3.0, pause_s=0.3)
        pairs.append((clean, add_white_noise(clean, 5.0, r)))
    return tmp_path, read_manifest(write_corpus(tmp_path, pairs))


def test_evaluate_identity_system_scores_perfectly(corpus):
    root, pairs = corpus
    reports = evaluate_corpus(pairs, {"clean": root / "clean", "degraded": None})
    assert len(reports["clean"].rows) == 3
    assert reports["clean"].mean["ssnr_db"] == 35.0
    assert reports["clean"].mean["stoi"] >= 0.99
    assert reports["degraded"].mean["ssnr_db"] < 35.0


def test_evaluate_noisier_system_scores_lower(corpus, tmp_path_factory):
    root, pairs = corpus
    worse = tmp_path_factory.mktemp("worse")
    for _, d in pairs:
        write_wav(add_white_noise(read_wav(d), 0.0, np.random.default_rng(1)), worse / d.name)
    reports = evaluate_corpus(pairs, {"noisy": None, "worse": worse})
    assert reports["worse"].mean["ssnr_db"] < reports["noisy"].mean["ssnr_db"]
    assert reports["worse"].mean["stoi"] < reports["noisy"].mean["stoi"]


def test_evaluate_skips_missing_and_mismatched_rows(corpus, tmp_path_factory, caplog):
    root, pairs = corpus
    partial = tmp_path_factory.mktemp("partial")
    shutil.copy(pairs[0][1], partial / pairs[0][1].name)
    write_wav(Waveform(np.zeros(100), FS), partial / pairs[1][1].name)
    with caplog.at_level(logging.WARNING):
        reports = evaluate_corpus(pairs, {"partial": partial})
    assert [r[0] for r in reports["partial"].rows] == [pairs[0][1].stem]
    assert "missing" in caplog.text and "mismatched" in caplog.text


def test_evaluate_parallel_matches_serial(corpus):
    root, pairs = corpus
    serial = evaluate_corpus(pairs, {"noisy": None})
    parallel = evaluate_corpus(pairs, {"noisy": None}, jobs=2)
    assert serial["noisy"].rows == parallel["noisy"].rows


def test_evaluate_empty_manifest():
    with pytest.raises(ValueError, match="empty"):
        evaluate_corpus([], {"x": None})
