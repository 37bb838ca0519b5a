"""Run configuration and the pretrain / conceal / sweep workflows behind the CLI."""

import dataclasses
import hashlib
import itertools
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav
from .engine import (FrameStream, PlcSession, generate_loss_pattern, load_checkpoint, process_stream,
                     save_checkpoint, write_frame_log)
from .metrics import FrameMetric, MetricsReport, lost_frame_metrics, periodic_extrapolation, zero_fill
from .numerics import ConfigurationError
from .predictor import PredictorConfig, new_model, pretrain

log = logging.getLogger(__name__)

CONCEALERS = ("lstm", "zero", "periodic")


@dataclass
class RunConfig:
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    sample_rate: int = 8000
    loss_rate: float = 0.1
    loss_mode: str = "even"
    loss_seed: int = 0
    loss_phase: Optional[int] = None
    concealer: str = "lstm"
    metrics_start_s: float = 0.0  # lost frames starting earlier are not scored
    min_pitch: int = 40
    max_pitch: int = 120
    input: Optional[str] = None
    output: Optional[str] = None
    corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None
    frame_log: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.predictor, dict):
            try:
                self.predictor = PredictorConfig.from_dict(self.predictor)
            except TypeError as exc:
                raise ConfigurationError(f"bad predictor configuration: {exc}") from exc
        if self.concealer not in CONCEALERS:
            raise ConfigurationError(f"concealer must be one of {CONCEALERS}")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample rate must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"bad run configuration: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def pattern_descriptor(self) -> dict:
        return {"rate": self.loss_rate, "mode": self.loss_mode, "seed": self.loss_seed, "phase": self.loss_phase}


def with_overrides(cfg: RunConfig, run: dict, predictor: dict, adam: dict) -> RunConfig:
    """Copy of ``cfg`` with non-None override values applied."""
    pred = cfg.predictor
    adam = {k: v for k, v in adam.items() if v is not None}
    if adam:
        pred = dataclasses.replace(pred, adam=dataclasses.replace(pred.adam, **adam))
    predictor = {k: v for k, v in predictor.items() if v is not None}
    if predictor:
        pred = dataclasses.replace(pred, **predictor)
    run = {k: v for k, v in run.items() if v is not None}
    return dataclasses.replace(cfg, predictor=pred, **run)


def corpus_files(corpus_dir) -> list:
    return sorted(p for p in Path(corpus_dir).iterdir() if p.suffix.lower() == ".wav" and p.is_file())


def corpus_digest(files) -> str:
    h = hashlib.sha256()
    for p in files:
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def run_pretrain(cfg: RunConfig, corpus_dir, out_checkpoint, echo=print):
    """Pretrain from a random init on every WAV in ``corpus_dir`` and save a checkpoint.

    Returns the ``PretrainReport``.  Raises ``ConfigurationError`` if the
    directory holds no WAV files.
    """
    files = corpus_files(corpus_dir)
    if not files:
        raise ConfigurationError(f"no .wav files in {corpus_dir}")
    pc = cfg.predictor

    def loader(path):
        def load():
            buf = read_wav(path)
            if buf.sample_rate != cfg.sample_rate:
                raise ValueError(f"{path.name}: {buf.sample_rate} Hz, expected {cfg.sample_rate} Hz")
            return buf.samples
        return load

    model = new_model(pc)
    report = pretrain(model, [loader(p) for p in files], pc)
    for k, loss, nframes in sorted(report.stream_losses):
        echo(f"{files[k].name}\tframes={nframes}\tmean_loss={loss:.6g}")
    for k, reason in report.skipped:
        echo(f"{files[k].name}\tskipped: {reason}")
    if not report.stream_losses:
        raise ConfigurationError(f"no readable {cfg.sample_rate} Hz WAV files in {corpus_dir}")
    meta = {"seed": pc.seed, "corpus_sha256": corpus_digest(files), "epochs": 1,
            "corpus_files": [p.name for p in files], "steps": report.steps}
    save_checkpoint(out_checkpoint, model, pc, None, meta)
    return report


def make_session(cfg: RunConfig) -> PlcSession:
    if cfg.checkpoint:
        return PlcSession.from_checkpoint(cfg.checkpoint, cfg.predictor)
    return PlcSession(cfg.predictor)


def conceal_samples(samples: np.ndarray, cfg: RunConfig, session: Optional[PlcSession] = None):
    """Frame, drop, conceal and score one signal.

    Returns ``(concealed, report, frame_log, stream)``.  The report's metadata
    echoes the full effective configuration and zero-fill baseline numbers.
    """
    pc = cfg.predictor
    stream = FrameStream.from_audio(AudioBuffer(np.asarray(samples, dtype=np.float64), cfg.sample_rate),
                                    pc.frame_len)
    if stream.n_frames == 0:
        raise ConfigurationError(f"input shorter than one {pc.frame_len}-sample frame")
    stream.availability = generate_loss_pattern(stream.n_frames, cfg.loss_rate, cfg.loss_mode,
                                                cfg.loss_seed, cfg.loss_phase)
    frame_log = []
    if cfg.concealer == "lstm":
        session = make_session(cfg) if session is None else session
        out, frame_log = process_stream(session, stream)
    elif cfg.concealer == "zero":
        out = zero_fill(stream.frames, stream.availability)
    else:
        out = periodic_extrapolation(stream.frames, stream.availability, cfg.min_pitch, cfg.max_pitch)
    ref = stream.frames.reshape(-1)
    start = int(np.ceil(cfg.metrics_start_s * cfg.sample_rate / pc.frame_len))
    zf = lost_frame_metrics(ref, zero_fill(stream.frames, stream.availability), stream.availability,
                            pc.frame_len, start)
    meta = {
        "config": cfg.to_dict(),
        "seed": pc.seed,
        "pattern": cfg.pattern_descriptor(),
        "frames": stream.n_frames,
        "dropped_samples": stream.dropped,
        "first_scored_frame": start,
        "zero_fill": {"mean_mse": zf.mean_mse, "seg_snr_db": zf.seg_snr_db},
    }
    if frame_log:
        meta["aborted_frames"] = sum(1 for r in frame_log if r.get("aborted"))
    report = lost_frame_metrics(ref, out, stream.availability, pc.frame_len, start, meta)
    return out, report, frame_log, stream


def run_conceal(cfg: RunConfig):
    """``cfg.input`` -> concealed ``cfg.output`` plus optional metrics and frame log."""
    buf = read_wav(cfg.input)
    if buf.sample_rate != cfg.sample_rate:
        raise ConfigurationError(f"{cfg.input} is {buf.sample_rate} Hz, configuration expects {cfg.sample_rate} Hz")
    out, report, frame_log, _ = conceal_samples(buf.samples, cfg)
    report.metadata["input"] = str(cfg.input)
    write_wav(AudioBuffer(out, buf.sample_rate), cfg.output)
    if cfg.metrics:
        Path(cfg.metrics).write_text(report.to_json())
    if cfg.frame_log:
        write_frame_log(frame_log, cfg.frame_log)
    return report


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_AXES = ("layers", "hidden", "timesteps", "passes")


def expand_grid(grid: dict) -> list:
    """Cartesian product of the axis values; window length follows ``hidden``."""
    axes = {a: list(grid.get(a, [])) for a in SWEEP_AXES}
    missing = [a for a, v in axes.items() if not v]
    if missing:
        raise ConfigurationError(f"grid needs values for {missing}")
    return [dict(zip(SWEEP_AXES, combo)) for combo in itertools.product(*(axes[a] for a in SWEEP_AXES))]


def point_key(point: dict) -> str:
    return "L{layers}_H{hidden}_T{timesteps}_P{passes}".format(**point)


def point_config(base: RunConfig, point: dict) -> RunConfig:
    pred = dataclasses.replace(base.predictor, num_layers=point["layers"], hidden=point["hidden"],
                               window_len=point["hidden"], time_steps=point["timesteps"],
                               passes=point["passes"])
    return dataclasses.replace(base, predictor=pred)


def pretrain_key(point: dict) -> str:
    return "L{layers}_H{hidden}_T{timesteps}".format(**point)


def _run_point(base_dict: dict, point: dict, inputs: list, point_dir: str, checkpoint: Optional[str]):
    base = RunConfig.from_dict(base_dict)
    cfg = point_config(base, point)
    cfg = dataclasses.replace(cfg, checkpoint=checkpoint)
    os.makedirs(point_dir, exist_ok=True)
    merged = MetricsReport(metadata={"config": cfg.to_dict(), "seed": cfg.predictor.seed,
                                     "pattern": cfg.pattern_descriptor(), "point": point,
                                     "inputs": [str(p) for p in inputs]})
    zf_frames = []
    for path in inputs:
        buf = read_wav(path)
        if buf.sample_rate != cfg.sample_rate:
            raise ConfigurationError(f"{path} is {buf.sample_rate} Hz, expected {cfg.sample_rate} Hz")
        out, report, frame_log, stream = conceal_samples(buf.samples, cfg)
        stem = Path(path).stem
        write_wav(AudioBuffer(out, buf.sample_rate), os.path.join(point_dir, f"{stem}.wav"))
        write_frame_log(frame_log, os.path.join(point_dir, f"{stem}.frames.jsonl"))
        report.metadata["input"] = str(path)
        Path(point_dir, f"{stem}.metrics.json").write_text(report.to_json())
        for f in report.frames:
            merged.frames.append(FrameMetric(f.index, f.mse, f.snr_db, f.silent))
        zf = lost_frame_metrics(stream.frames.reshape(-1), zero_fill(stream.frames, stream.availability),
                                stream.availability, cfg.predictor.frame_len, report.metadata["first_scored_frame"])
        zf_frames += zf.frames
    agg = merged.recompute()
    merged.mean_mse, merged.seg_snr_db, merged.n_lost, merged.n_silent = (
        agg["mean_mse"], agg["seg_snr_db"], agg["n_lost"], agg["n_silent"])
    zf_all = MetricsReport(frames=zf_frames).recompute()
    merged.metadata["zero_fill"] = {"mean_mse": zf_all["mean_mse"], "seg_snr_db": zf_all["seg_snr_db"]}
    Path(point_dir, "metrics.json").write_text(merged.to_json())
    Path(point_dir, ".done").write_text("ok\n")
    return merged.to_dict()


def _pretrain_job(base_dict: dict, point: dict, corpus_dir: str, out_path: str):
    cfg = point_config(RunConfig.from_dict(base_dict), point)
    tmp = out_path + ".tmp"
    run_pretrain(cfg, corpus_dir, tmp, echo=lambda *_: None)
    os.replace(tmp, out_path)
    return out_path


def _pool(jobs):
    return ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None


def _map(jobs, fn, arglist):
    """Run ``fn(*args)`` for each args tuple; yields ``(i, result, error)``."""
    pool = _pool(jobs)
    if pool is None:
        for i, args in enumerate(arglist):
            try:
                yield i, fn(*args), None
            except Exception:  # noqa: BLE001 - recorded per point
                yield i, None, traceback.format_exc()
        return
    with pool:
        futures = {pool.submit(fn, *args): i for i, args in enumerate(arglist)}
        for fut in as_completed(futures):
            try:
                yield futures[fut], fut.result(), None
            except Exception:  # noqa: BLE001
                yield futures[fut], None, traceback.format_exc()


TABLE_COLUMNS = ("layers", "hidden", "window", "timesteps", "passes", "n_lost", "mean_mse", "seg_snr_db",
                 "zero_fill_mse", "zero_fill_seg_snr_db", "status")


def run_sweep(base: RunConfig, grid: dict, inputs: list, out_dir, jobs: Optional[int] = None,
              pretrain_corpus=None, echo=print):
    """Evaluate every grid point on every input; returns ``(rows, failures)``.

    Each finished point leaves ``<out_dir>/<key>/.done``; rerunning the same
    sweep skips those points.  With ``pretrain_corpus`` each distinct
    (layers, hidden, timesteps) network is pretrained once and cached under
    ``<out_dir>/checkpoints``; otherwise ``base.checkpoint`` (if any) is used.
    """
    jobs = jobs or os.cpu_count() or 1
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = expand_grid(grid)
    inputs = [str(p) for p in inputs]
    if not inputs:
        raise ConfigurationError("sweep needs at least one input file")
    base_dict = base.to_dict()
    failures = {}

    checkpoints = {}
    if pretrain_corpus:
        ck_dir = out_dir / "checkpoints"
        ck_dir.mkdir(exist_ok=True)
        todo = {}
        for p in points:
            key = pretrain_key(p)
            path = ck_dir / f"{key}.plcn"
            checkpoints[key] = str(path)
            if not path.exists():
                todo.setdefault(key, p)
        jobs_list = [(base_dict, p, str(pretrain_corpus), checkpoints[k]) for k, p in todo.items()]
        keys = list(todo)
        for i, _, err in _map(jobs, _pretrain_job, jobs_list):
            if err:
                failures[keys[i]] = err
                echo(f"pretraining {keys[i]} failed:\n{err}")
            else:
                echo(f"pretrained {keys[i]}")

    results = {}
    pending = []
    for p in points:
        key = point_key(p)
        pdir = out_dir / key
        if (pdir / ".done").exists():
            results[key] = json.loads((pdir / "metrics.json").read_text())
            echo(f"{key}: already done, skipped")
            continue
        ck = checkpoints.get(pretrain_key(p)) if pretrain_corpus else base.checkpoint
        if pretrain_corpus and pretrain_key(p) in failures:
            failures[key] = "pretraining failed"
            continue
        pending.append((p, (base_dict, p, inputs, str(pdir), ck)))

    for i, res, err in _map(jobs, _run_point, [a for _, a in pending]):
        key = point_key(pending[i][0])
        if err:
            failures[key] = err
            echo(f"{key}: FAILED\n{err}")
        else:
            results[key] = res
            echo(f"{key}: seg_snr={res['seg_snr_db']} dB mean_mse={res['mean_mse']}")

    rows = []
    for p in points:
        key = point_key(p)
        r = results.get(key)
        zf = (r or {}).get("metadata", {}).get("zero_fill", {})
        rows.append({
            "layers": p["layers"], "hidden": p["hidden"], "window": p["hidden"], "timesteps": p["timesteps"],
            "passes": p["passes"],
            "n_lost": r["n_lost"] if r else "",
            "mean_mse": r["mean_mse"] if r else "",
            "seg_snr_db": r["seg_snr_db"] if r else "",
            "zero_fill_mse": zf.get("mean_mse", ""),
            "zero_fill_seg_snr_db": zf.get("seg_snr_db", ""),
            "status": "ok" if r else "failed",
        })
    with open(out_dir / "sweep_table.tsv", "w") as fh:
        fh.write("\t".join(TABLE_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in TABLE_COLUMNS) + "\n")
    (out_dir / "sweep_config.json").write_text(json.dumps(
        {"base": base_dict, "grid": grid, "inputs": inputs}, indent=2, sort_keys=True))
    return rows, failures


def parse_axis(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]

