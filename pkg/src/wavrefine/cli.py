"""``wavrefine`` command line: prepare, pre-enhance, train, enhance, evaluate, print-config.

Settings come from a flat ``key = value`` config file (``--config``), with
command-line flags overriding file values. Every key has a flag of the same
name (underscores become dashes). ``WR_SEED`` supplies the seed when neither
the file nor a flag sets it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from wavrefine.audio import WavFormatError, check_pipeline_rate, read_wav, resample, write_wav
from wavrefine.autograd import NonFiniteError
from wavrefine.dataset import align, chunk_training, read_manifest, trim_pair, write_chunk_cache
from wavrefine.dsp import EnhancerChain, WienerParams, pre_enhance
from wavrefine.metrics import evaluate_corpus, format_table
from wavrefine.model import SeganConfig
from wavrefine.trainer import TrainingData, TrainingDiverged, enhance, load_generator, train

log = logging.getLogger("wavrefine")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RATE = 16000
# outputs are written with the exact inverse of the reader's scaling
PCM_SCALE = 32768.0
CACHE_FILES = ("clean.wrchnk", "noisy.wrchnk", "pre.wrchnk")
PREPARE_STAMP = "prepare.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --- value parsers -----------------------------------------------------------


def parse_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_opt_int(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


def parse_ints(s) -> tuple[int, ...]:
    vals = tuple(int(v) for v in str(s).replace(" ", "").split(",") if v)
    if not vals:
        raise ValueError("empty list")
    return vals


def parse_path(s):
    s = str(s).strip()
    return s or None


def parse_systems(s) -> dict[str, str]:
    """``name=dir,name=dir`` -> ordered mapping."""
    out = {}
    for item in str(s).split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, path = item.partition("=")
        if not sep or not name.strip() or not path.strip():
            raise ValueError(f"system entry {item!r} is not name=dir")
        out[name.strip()] = path.strip()
    return out


PARSERS = {
    "int": int,
    "float": float,
    "bool": parse_bool,
    "str": str,
    "path": parse_path,
    "optint": parse_opt_int,
    "ints": parse_ints,
    "systems": parse_systems,
}


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, dict):
        return ",".join(f"{k}={p}" for k, p in v.items())
    return str(v)


# --- config keys -------------------------------------------------------------

PREP = ("prepare", "pre-enhance")
MODEL = ("train",)
FROM_PRESET = "<preset>"


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    help: str
    commands: tuple[str, ...]

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


_model_help = {
    "window_len": "samples per network window",
    "enc_channels": "encoder channel counts, comma separated",
    "filter_width": "convolution width",
    "stride": "convolution stride",
    "latent_channels": "latent channels at the bottleneck (none = last encoder width)",
    "d_alpha": "discriminator leaky-ReLU slope",
    "residual_skip": "add the input to the generator output",
    "lambda_l1": "weight of the L1 term in the generator loss",
    "J": "generator iterations per step",
    "P_J": "fraction of generator iterations that may use the pre-enhanced reference",
    "warmup_epochs": "epochs during which the pre-enhanced reference is used",
    "total_epochs": "number of training epochs",
    "batch_size": "chunks per batch",
    "learning_rate": "RMSprop learning rate",
    "d_iters_K": "discriminator iterations per step",
    "steps_per_epoch": "cap on steps per epoch (none = all full batches)",
    "stochastic_schedule": "draw the reference choice at random with probability P_J",
    "fixed_z": "at inference, draw one latent per file and reuse it for every window",
    "vbn_ref_size": "reference batch size for virtual batch norm (none = batch_size)",
    "vbn_include_current": "mix the current example into the normalization statistics",
    "vbn_refresh": "recompute reference statistics every step with current weights",
    "dtype": "float32 or float64",
}
_model_kind = {"enc_channels": "ints", "latent_channels": "optint", "steps_per_epoch": "optint", "vbn_ref_size": "optint", "dtype": "str"}


def _model_keys() -> list[Key]:
    keys = []
    for f in fields(SeganConfig):
        kind = _model_kind.get(f.name)
        if kind is None:
            kind = {bool: "bool", int: "int", float: "float"}[type(getattr(SeganConfig(), f.name))]
        cmds = MODEL + ("prepare",) if f.name == "window_len" else MODEL
        keys.append(Key(f.name, kind, FROM_PRESET, _model_help[f.name], cmds))
    return keys


KEYS: list[Key] = [
    Key("preset", "str", "paper", "model size preset: paper or toy", MODEL + ("prepare",)),
    *_model_keys(),
    Key("manifest", "path", None, "tab-separated clean/degraded manifest", ("prepare", "pre-enhance", "evaluate")),
    Key("cache_dir", "path", None, "directory for prepared chunk caches", ("prepare", "train")),
    Key("checkpoint_dir", "path", None, "directory for training checkpoints and the loss log", ("train", "enhance")),
    Key("checkpoint", "path", None, "checkpoint to enhance with (default: checkpoint_dir/latest.wrckpt)", ("enhance",)),
    Key("input_dir", "path", None, "directory of input WAV files", ("enhance", "pre-enhance")),
    Key("output_dir", "path", None, "directory for output WAV files", ("enhance", "pre-enhance")),
    Key("report_dir", "path", None, "directory for metric CSVs and the summary table", ("evaluate",)),
    Key("systems", "systems", {}, "systems to score as name=dir pairs, comma separated", ("evaluate",)),
    Key("include_degraded", "bool", True, "also score the unprocessed degraded files", ("evaluate",)),
    Key("seed", "optint", None, "RNG seed (falls back to WR_SEED, then 0)", ("train", "enhance")),
    Key("max_steps", "optint", None, "stop after this many training steps", ("train",)),
    Key("enhance_batch", "int", 16, "windows per generator call at inference", ("enhance",)),
    Key("chain", "str", "wiener,hrnr", "pre-enhancement stages, comma separated", PREP),
    Key("stft_frame", "int", 512, "STFT frame length for pre-enhancement", PREP),
    Key("stft_hop", "int", 256, "STFT hop for pre-enhancement", PREP),
    Key("wiener_alpha", "float", 0.98, "decision-directed smoothing factor", PREP),
    Key("gain_floor_db", "float", -18.0, "minimum spectral gain in dB", PREP),
    Key("init_noise_frames", "int", 6, "leading frames used for the initial noise estimate", PREP),
    Key("noise_smoothing", "float", 0.98, "noise-estimate recursive averaging factor", PREP),
    Key("vad_threshold", "float", 0.15, "log-likelihood threshold for speech presence", PREP),
    Key("hrnr_rho", "float", 0.5, "HRNR mixing weight of the decision-directed spectrum", PREP),
    Key("pre_suffix", "str", "_pre", "suffix for enhanced files written beside their originals", ("pre-enhance",)),
    Key("max_lag", "int", 8000, "largest delay searched during alignment, in 16 kHz samples", ("prepare",)),
    Key("trim_threshold_db", "float", -50.0, "frame energy below this is silence (dBFS)", ("prepare",)),
    Key("min_silence_ms", "float", 200.0, "edge silence longer than this is trimmed", ("prepare",)),
    Key("jobs", "int", 1, "worker processes for per-utterance work", ("prepare", "pre-enhance", "evaluate")),
    Key("strict", "bool", False, "abort on the first failing file instead of skipping it", ("prepare", "pre-enhance")),
]
KEY_BY_NAME = {k.name: k for k in KEYS}
COMMANDS = ("prepare", "pre-enhance", "train", "enhance", "evaluate", "print-config")
MODEL_FIELDS = tuple(f.name for f in fields(SeganConfig))


def keys_for(command: str) -> list[Key]:
    return KEYS if command == "print-config" else [k for k in KEYS if command in k.commands]


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        name = name.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if name not in KEY_BY_NAME:
            raise UsageError(f"{path}:{lineno}: unknown config key {name!r}")
        if name in out:
            raise UsageError(f"{path}:{lineno}: duplicate key {name!r}")
        try:
            out[name] = PARSERS[KEY_BY_NAME[name].kind](value.strip())
        except ValueError as e:
            raise UsageError(f"{path}:{lineno}: bad value for {name}: {e}") from e
    return out


@dataclass
class RunConfig:
    """Resolved settings for one command: model fields, paths, seed and pre-enhancement chain."""

    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def get(self, name, default=None):
        return self.values.get(name, default)

    def segan_config(self) -> SeganConfig:
        base = SeganConfig.toy() if self.values.get("preset") == "toy" else SeganConfig()
        d = base.to_dict()
        d.update({k: self.values[k] for k in MODEL_FIELDS if self.values.get(k, FROM_PRESET) != FROM_PRESET})
        return SeganConfig.from_dict(d)

    def wiener_params(self) -> WienerParams:
        return WienerParams(
            frame_len=self["stft_frame"],
            hop=self["stft_hop"],
            alpha_dd=self["wiener_alpha"],
            gain_floor_db=self["gain_floor_db"],
            init_noise_frames=self["init_noise_frames"],
            noise_smoothing=self["noise_smoothing"],
            vad_threshold=self["vad_threshold"],
        )

    def chain(self) -> EnhancerChain:
        return EnhancerChain.from_names(self["chain"], self.wiener_params(), self["hrnr_rho"])

    def dump(self) -> str:
        lines = [f"# resolved configuration ({self.command})"]
        for k in keys_for(self.command):
            v = self.values[k.name]
            lines.append(f"{k.name} = {'' if k.kind == 'path' and v is None else format_value(v)}")
        return "\n".join(lines) + "\n"


def resolve(command: str, file_values: dict, flag_values: dict, env=None) -> RunConfig:
    """Defaults < config file < flags; the seed falls back to ``WR_SEED``."""
    env = os.environ if env is None else env
    values = {k.name: k.default for k in keys_for(command)}
    for src in (file_values, flag_values):
        values.update({k: v for k, v in src.items() if k in values})
    if "seed" in values and values["seed"] is None:
        raw = env.get("WR_SEED")
        try:
            values["seed"] = int(raw) if raw not in (None, "") else 0
        except ValueError as e:
            raise UsageError(f"WR_SEED must be an integer, got {raw!r}") from e
    if values.get("preset", "paper") not in ("paper", "toy"):
        raise UsageError(f"preset must be 'paper' or 'toy', got {values['preset']!r}")
    cfg = RunConfig(command, values)
    if command in ("train", "print-config", "prepare"):
        try:
            seg = cfg.segan_config()
        except (ValueError, TypeError) as e:
            raise UsageError(f"invalid model configuration: {e}") from e
        if command == "print-config":
            values.update({k: getattr(seg, k) for k in MODEL_FIELDS})
    if "chain" in values:
        try:
            cfg.chain()
        except (ValueError, TypeError) as e:
            raise UsageError(f"invalid pre-enhancement settings: {e}") from e
    if values.get("jobs", 1) < 1:
        raise UsageError("jobs must be >= 1")
    return cfg


# --- path validation -----------------------------------------------------------


def _need(cfg: RunConfig, key: str) -> Path:
    v = cfg.get(key)
    if v in (None, ""):
        raise UsageError(f"{cfg.command}: '{key}' is required (config key or {KEY_BY_NAME[key].flag})")
    return Path(v)


def _existing_file(cfg, key) -> Path:
    p = _need(cfg, key)
    if not p.is_file():
        raise DataError(f"{key}: {p} does not exist")
    return p


def _existing_dir(cfg, key) -> Path:
    p = _need(cfg, key)
    if not p.is_dir():
        raise DataError(f"{key}: {p} is not a directory")
    return p


def _output_dir(cfg, key) -> Path:
    p = _need(cfg, key)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"{key}: cannot create {p}: {e}") from e
    return p


def _wav_files(d: Path, exclude_suffix: str | None = None) -> list[Path]:
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".wav" and p.is_file())
    if exclude_suffix:
        files = [p for p in files if not p.stem.endswith(exclude_suffix)]
    return files


def _to_pipeline_rate(w, path):
    check_pipeline_rate(w, path)
    return w if w.sample_rate_hz == RATE else resample(w, RATE)


# --- prepare -------------------------------------------------------------------


@dataclass(frozen=True)
class PrepareParams:
    window_len: int
    max_lag: int
    trim_threshold_db: float
    min_silence_ms: float
    chain: EnhancerChain


def prepare_pair(clean_path: Path, degraded_path: Path, p: PrepareParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Align, trim, resample and chunk one pair; returns (clean, noisy, pre) chunks and the delay."""
    clean = _to_pipeline_rate(read_wav(clean_path), clean_path)
    degraded = _to_pipeline_rate(read_wav(degraded_path), degraded_path)
    max_lag = min(p.max_lag, len(degraded) - 1)
    if max_lag < 1:
        raise ValueError(f"{degraded_path}: too short to align")
    pair = trim_pair(align(clean, degraded, max_lag, p.window_len), p.trim_threshold_db, p.min_silence_ms)
    if len(pair.clean) < p.window_len:
        raise ValueError(f"trimmed length {len(pair.clean)} is shorter than one window ({p.window_len})")
    pre = pre_enhance(pair.degraded, p.chain)
    hop = p.window_len // 2
    return (
        chunk_training(pair.clean, p.window_len, hop).chunks,
        chunk_training(pair.degraded, p.window_len, hop).chunks,
        chunk_training(pre, p.window_len, hop).chunks,
        pair.delay_samples,
    )


def _prepare_task(task):
    clean_path, degraded_path, params = task
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return prepare_pair(clean_path, degraded_path, params), None
    except (OSError, ValueError, WavFormatError) as e:
        return None, f"{degraded_path}: {e}"


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def prepare_hash(pairs, cfg: RunConfig) -> str:
    """Digest of the settings and every input file's bytes; equal digests mean the cache is current."""
    h = hashlib.sha256()
    settings = {k.name: format_value(cfg[k.name]) for k in keys_for("prepare") if k.name not in ("jobs", "strict", "cache_dir")}
    settings["window_len"] = cfg.segan_config().window_len
    h.update(json.dumps(settings, sort_keys=True).encode())
    for clean_path, degraded_path in pairs:
        for p in (clean_path, degraded_path):
            h.update(str(p).encode())
            h.update(_file_digest(p).encode() if Path(p).is_file() else b"<missing>")
    return h.hexdigest()


def cmd_prepare(cfg: RunConfig) -> int:
    manifest = _existing_file(cfg, "manifest")
    cache_dir = _output_dir(cfg, "cache_dir")
    try:
        pairs = read_manifest(manifest)
    except ValueError as e:
        raise DataError(str(e)) from e
    if not pairs:
        raise DataError(f"{manifest}: no pairs listed")
    digest = prepare_hash(pairs, cfg)
    stamp_path = cache_dir / PREPARE_STAMP
    if stamp_path.exists() and all((cache_dir / n).exists() for n in CACHE_FILES):
        stamp = json.loads(stamp_path.read_text())
        # a strict run must not accept a cache built with rejected pairs
        if stamp.get("hash") == digest and not (cfg["strict"] and stamp.get("rejected")):
            print(f"cache up to date: {stamp['pairs']} pairs, {stamp['chunks']} chunks, {stamp['rejected']} rejected")
            return EXIT_OK

    window = cfg.segan_config().window_len
    params = PrepareParams(window, cfg["max_lag"], cfg["trim_threshold_db"], cfg["min_silence_ms"], cfg.chain())
    tasks = [(c, d, params) for c, d in pairs]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as ex:
            results = list(ex.map(_prepare_task, tasks))
    else:
        results = [_prepare_task(t) for t in tasks]

    parts = ([], [], [])
    rejected = []
    for res, err in results:
        if err is not None:
            if cfg["strict"]:
                raise DataError(err)
            warnings.warn(f"pair skipped: {err}", RuntimeWarning, stacklevel=1)
            rejected.append(err)
            continue
        for acc, arr in zip(parts, res[:3]):
            acc.append(arr)
    if not parts[0]:
        raise DataError("no usable pairs in manifest")
    chunks = [np.concatenate(a) for a in parts]
    for name, arr in zip(CACHE_FILES, chunks):
        write_chunk_cache(cache_dir / name, arr, window, window // 2)
    summary = {"hash": digest, "pairs": len(parts[0]), "chunks": int(chunks[0].shape[0]), "rejected": len(rejected), "window_len": window}
    tmp = stamp_path.with_name(stamp_path.name + ".tmp")
    tmp.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    tmp.replace(stamp_path)
    print(f"prepared {summary['pairs']} pairs, {summary['chunks']} chunks, {summary['rejected']} rejected")
    return EXIT_OK


# --- pre-enhance ---------------------------------------------------------------


def _pre_enhance_task(task):
    src, dst, chain = task
    try:
        w = _to_pipeline_rate(read_wav(src), src)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            write_wav(pre_enhance(w, chain), dst, scale=PCM_SCALE)
        return None
    except (OSError, ValueError, WavFormatError) as e:
        return f"{src}: {e}"


def cmd_pre_enhance(cfg: RunConfig) -> int:
    suffix = cfg["pre_suffix"]
    if cfg.get("input_dir"):
        sources = _wav_files(_existing_dir(cfg, "input_dir"), exclude_suffix=suffix)
    elif cfg.get("manifest"):
        try:
            sources = [d for _, d in read_manifest(_existing_file(cfg, "manifest"))]
        except ValueError as e:
            raise DataError(str(e)) from e
    else:
        raise UsageError("pre-enhance: set 'input_dir' or 'manifest'")
    out_dir = _output_dir(cfg, "output_dir") if cfg.get("output_dir") else None
    chain = cfg.chain()
    tasks = [(s, (out_dir / s.name) if out_dir else s.with_name(s.stem + suffix + ".wav"), chain) for s in sources]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(cfg["jobs"]) as ex:
            errors = list(ex.map(_pre_enhance_task, tasks))
    else:
        errors = [_pre_enhance_task(t) for t in tasks]
    failed = [e for e in errors if e is not None]
    for err in failed:
        if cfg["strict"]:
            raise DataError(err)
        warnings.warn(f"file skipped: {err}", RuntimeWarning, stacklevel=1)
    print(f"pre-enhanced {len(tasks) - len(failed)} files, {len(failed)} skipped")
    return EXIT_OK


# --- train ---------------------------------------------------------------------


def cmd_train(cfg: RunConfig, resume: str | None = None) -> int:
    cache_dir = _existing_dir(cfg, "cache_dir")
    ckpt_dir = _output_dir(cfg, "checkpoint_dir")
    resume_path = None
    if resume is not None:
        resume_path = ckpt_dir / "latest.wrckpt" if resume == "latest" else Path(resume)
        if not resume_path.is_file():
            raise DataError(f"resume checkpoint {resume_path} does not exist")
    try:
        data = TrainingData.from_cache(cache_dir)
    except (FileNotFoundError, ValueError) as e:
        raise DataError(str(e)) from e
    seg = cfg.segan_config()
    if resume_path is None and data.clean.shape[1] != seg.window_len:
        raise DataError(f"cache windows are {data.clean.shape[1]} samples but window_len is {seg.window_len}")
    state = train(data, seg, ckpt_dir, seed=cfg["seed"], resume=resume_path, max_steps=cfg["max_steps"])
    last = state.history[-1] if state.history else None
    tail = f", last d_loss {last.d_loss:.4f} g_l1 {last.g_l1:.4f}" if last else ""
    print(f"trained to epoch {state.epoch}, {state.global_step} steps{tail}")
    return EXIT_OK


# --- enhance -------------------------------------------------------------------


def cmd_enhance(cfg: RunConfig) -> int:
    if cfg.get("checkpoint"):
        ckpt = _existing_file(cfg, "checkpoint")
    else:
        ckpt = _need(cfg, "checkpoint_dir") / "latest.wrckpt"
        if not ckpt.is_file():
            raise DataError(f"no checkpoint given and {ckpt} does not exist")
    in_dir = _existing_dir(cfg, "input_dir")
    out_dir = _output_dir(cfg, "output_dir")
    files = _wav_files(in_dir)
    inputs = []
    for f in files:
        w = read_wav(f)
        if w.sample_rate_hz != RATE:
            raise DataError(f"{f}: enhance needs {RATE} Hz input, got {w.sample_rate_hz} Hz")
        inputs.append((f, w))
    try:
        g, seg = load_generator(ckpt)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"{ckpt}: cannot load generator: {e}") from e
    for f, w in inputs:
        out = enhance(w, g, seg, seed=cfg["seed"], batch=cfg["enhance_batch"])
        write_wav(out, out_dir / f.name, scale=PCM_SCALE)
    print(f"enhanced {len(inputs)} files into {out_dir}")
    return EXIT_OK


# --- evaluate ------------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig) -> int:
    manifest = _existing_file(cfg, "manifest")
    report_dir = _output_dir(cfg, "report_dir")
    systems: dict[str, Path | None] = {}
    if cfg["include_degraded"]:
        systems["degraded"] = None
    for name, d in cfg["systems"].items():
        if not Path(d).is_dir():
            raise DataError(f"system {name!r}: {d} is not a directory")
        systems[name] = Path(d)
    if not systems:
        raise UsageError("evaluate: no systems to score (set 'systems' or 'include_degraded')")
    try:
        pairs = read_manifest(manifest)
        reports = evaluate_corpus(pairs, systems, jobs=cfg["jobs"])
    except ValueError as e:
        raise DataError(str(e)) from e
    for name, rep in reports.items():
        rep.write_csv(report_dir / f"{name}.csv")
    table = format_table(reports)
    (report_dir / "summary.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_key(p: argparse.ArgumentParser, k: Key):
    default = "from preset" if k.default == FROM_PRESET else format_value(k.default)
    text = f"[{k.name}] {k.help} (default: {default})"
    if k.kind == "bool":
        p.add_argument(k.flag, dest=k.name, type=parse_bool, nargs="?", const=True, default=argparse.SUPPRESS, metavar="BOOL", help=text)
    else:
        p.add_argument(k.flag, dest=k.name, type=PARSERS[k.kind], default=argparse.SUPPRESS, metavar=k.kind.upper(), help=text)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file; flags override its values")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap = _Parser(prog="wavrefine", description=__doc__.split("\n\n")[0], formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    blurbs = {
        "prepare": "align, trim and chunk a training manifest into caches with pre-enhanced references",
        "pre-enhance": "run the baseline enhancement chain over a directory or manifest",
        "train": "train the generator and discriminator from prepared caches",
        "enhance": "enhance every WAV in a directory with a trained generator",
        "evaluate": "score system outputs against a manifest (SSNR, STOI, LSD)",
        "print-config": "print the fully resolved configuration",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=blurbs[name], description=blurbs[name] + ". Config keys are shown in brackets.")
        if name == "train":
            p.add_argument("--resume", nargs="?", const="latest", default=None, metavar="CHECKPOINT", help="continue from a checkpoint (default: checkpoint_dir/latest.wrckpt)")
        for k in keys_for(name):
            _add_key(p, k)
    return ap


def _flag_values(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items() if k in KEY_BY_NAME}


def run(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(ns.config) if ns.config else {}
        cfg = resolve(ns.command, file_values, _flag_values(ns))
        if ns.command == "print-config":
            print(cfg.dump(), end="")
            return EXIT_OK
        if ns.command == "train":
            return cmd_train(cfg, ns.resume)
        handler = {"prepare": cmd_prepare, "pre-enhance": cmd_pre_enhance, "enhance": cmd_enhance, "evaluate": cmd_evaluate}[ns.command]
        return handler(cfg)
    except UsageError as e:
        print(f"wavrefine {ns.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WavFormatError, FileNotFoundError) as e:
        print(f"wavrefine {ns.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as e:
        print(f"wavrefine {ns.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
