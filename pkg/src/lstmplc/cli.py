"""``lstmplc`` command line: pretrain, conceal, evaluate and sweep.

Exit codes
----------
0  success
2  configuration error (bad flag/config value, shape mismatch, empty corpus,
   sample-rate mismatch)
3  I/O error (unreadable/unwritable file, malformed WAV, corrupt checkpoint)
4  numerical abort (non-finite loss during training; outputs are still written)
5  sweep finished but at least one grid point failed
"""

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .audio import WavFormatError, read_wav
from .engine import CheckpointError, ConfigMismatchError, generate_loss_pattern, load_checkpoint
from .experiment import (RunConfig, parse_axis, run_conceal, run_pretrain, run_sweep,
                         with_overrides)
from .metrics import lost_frame_metrics
from .numerics import ConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SWEEP_PARTIAL = 5

log = logging.getLogger("lstmplc")


def _add_model_flags(p, axes=False):
    kind = parse_axis if axes else int
    suffix = " (comma-separated list)" if axes else ""
    p.add_argument("--layers", type=kind, help="number of stacked LSTM layers" + suffix)
    p.add_argument("--hidden", type=kind, help="hidden units per layer H" + suffix)
    if not axes:
        p.add_argument("--window", type=int, help="input window length L")
    p.add_argument("--timesteps", type=kind, help="unrolled time steps T" + suffix)
    p.add_argument("--passes", type=kind, help="training passes per received frame P" + suffix)


def _add_common_flags(p):
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="weight-initialisation / shuffling seed")
    p.add_argument("--frame-len", type=int, help="samples per frame N")
    p.add_argument("--sample-rate", type=int, help="expected input sample rate in Hz")
    p.add_argument("--lr", type=float, help="Adam step size")
    p.add_argument("--clip-norm", type=float, help="global gradient-norm clip; 0 disables")
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--rollout", choices=("carry", "fresh"), help="lost-frame synthesis mode")
    p.add_argument("--supervise", choices=("last", "all"), help="which time steps carry loss")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_pattern_flags(p):
    p.add_argument("--loss-rate", type=float, help="fraction of frames dropped")
    p.add_argument("--pattern", choices=("even", "random"), help="loss pattern mode")
    p.add_argument("--pattern-seed", type=int, help="seed for the random loss pattern")
    p.add_argument("--pattern-phase", type=int, help="index of the first lost frame (even mode)")
    p.add_argument("--metrics-start", type=float, help="score only lost frames after this many seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lstmplc", description="Online-adaptive LSTM packet loss concealment")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain a network on a directory of WAV files")
    p.add_argument("--corpus", required=True, help="directory of 16-bit mono WAV files")
    p.add_argument("--out", required=True, help="checkpoint to write")
    _add_model_flags(p)
    _add_common_flags(p)

    p = sub.add_parser("conceal", help="drop frames from a WAV and conceal them")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--out", dest="output", required=True, help="concealed WAV to write")
    p.add_argument("--checkpoint", help="pretrained checkpoint to start from")
    p.add_argument("--metrics", help="metrics report JSON (default: <out>.metrics.json)")
    p.add_argument("--frame-log", help="per-frame JSONL log (default: <out>.frames.jsonl)")
    p.add_argument("--concealer", choices=("lstm", "zero", "periodic"), help="concealment method")
    _add_model_flags(p)
    _add_pattern_flags(p)
    _add_common_flags(p)

    p = sub.add_parser("evaluate", help="score a concealed WAV against its reference")
    p.add_argument("--ref", required=True, help="original WAV")
    p.add_argument("--test", required=True, help="concealed WAV")
    p.add_argument("--frame-log", help="frame log giving the lost frames (else regenerate the pattern)")
    p.add_argument("--metrics", help="write the report here instead of stdout")
    _add_pattern_flags(p)
    _add_common_flags(p)

    p = sub.add_parser("sweep", help="evaluate a grid of configurations")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input WAVs or directories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", help="JSON object mapping layers/hidden/timesteps/passes to value lists")
    p.add_argument("--jobs", type=int, help="parallel points (default: CPU count)")
    p.add_argument("--pretrain-corpus", help="pretrain one checkpoint per network shape from this directory")
    p.add_argument("--checkpoint", help="shared pretrained checkpoint (must match every grid shape)")
    _add_model_flags(p, axes=True)
    _add_pattern_flags(p)
    _add_common_flags(p)
    return parser


def effective_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    g = lambda name: getattr(args, name, None)  # noqa: E731
    single = lambda name: None if isinstance(g(name), list) else g(name)  # noqa: E731
    adam = {"alpha": g("lr")}
    predictor = {
        "num_layers": single("layers"), "hidden": single("hidden"), "window_len": g("window"),
        "time_steps": single("timesteps"), "passes": single("passes"), "seed": g("seed"),
        "frame_len": g("frame_len"), "precision": g("precision"), "rollout": g("rollout"),
        "supervise": g("supervise"),
    }
    run = {
        "sample_rate": g("sample_rate"), "loss_rate": g("loss_rate"), "loss_mode": g("pattern"),
        "loss_seed": g("pattern_seed"), "loss_phase": g("pattern_phase"), "metrics_start_s": g("metrics_start"),
        "concealer": g("concealer"), "input": g("input"), "output": g("output"), "corpus": g("corpus"),
        "checkpoint": g("checkpoint"), "metrics": g("metrics"), "frame_log": g("frame_log"),
    }
    cfg = with_overrides(base, run, predictor, adam)
    clip = g("clip_norm")
    if clip is not None:
        cfg.predictor.adam = dataclasses.replace(cfg.predictor.adam, clip_norm=clip if clip > 0 else None)
    return cfg


def cmd_pretrain(args) -> int:
    cfg = effective_config(args)
    cfg.corpus, cfg.output = args.corpus, args.out
    if not Path(args.corpus).is_dir():
        raise ConfigurationError(f"corpus directory {args.corpus} does not exist")
    run_pretrain(cfg, args.corpus, args.out)
    ck = load_checkpoint(args.out)
    if not all(np.all(np.isfinite(a)) for _, a in ck.model.tensors()):
        log.error("pretraining produced non-finite weights")
        return EXIT_NUMERIC
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_conceal(args) -> int:
    cfg = effective_config(args)
    if cfg.metrics is None:
        cfg.metrics = cfg.output + ".metrics.json"
    if cfg.frame_log is None:
        cfg.frame_log = cfg.output + ".frames.jsonl"
    report = run_conceal(cfg)
    Path(cfg.output + ".config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    print(f"lost frames scored: {report.n_lost}  mean MSE: {report.mean_mse:.6g}  "
          f"segmental SNR: {report.seg_snr_db:.3f} dB  (zero-fill {report.metadata['zero_fill']['seg_snr_db']:.3f} dB)")
    if report.metadata.get("aborted_frames"):
        log.error("%d frame(s) hit a non-finite training loss", report.metadata["aborted_frames"])
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = effective_config(args)
    ref, test = read_wav(args.ref), read_wav(args.test)
    if ref.sample_rate != test.sample_rate:
        raise ConfigurationError(f"sample rates differ: {ref.sample_rate} vs {test.sample_rate}")
    N = cfg.predictor.frame_len
    n = min(len(ref), len(test)) // N
    if args.frame_log:
        with open(args.frame_log) as fh:
            lost = [json.loads(line)["lost"] for line in fh if line.strip()]
        avail = ~np.asarray(lost[:n], dtype=bool)
        n = avail.shape[0]
    else:
        avail = generate_loss_pattern(n, cfg.loss_rate, cfg.loss_mode, cfg.loss_seed, cfg.loss_phase)
    start = int(math.ceil(cfg.metrics_start_s * ref.sample_rate / N))
    report = lost_frame_metrics(ref.samples[:n * N], test.samples[:n * N], avail, N, start,
                                {"config": cfg.to_dict(), "seed": cfg.predictor.seed, "reference": args.ref,
                                 "test": args.test, "pattern": cfg.pattern_descriptor()})
    text = report.to_json()
    if args.metrics:
        Path(args.metrics).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _expand_inputs(items):
    files = []
    for item in items:
        p = Path(item)
        files += sorted(q for q in p.iterdir() if q.suffix.lower() == ".wav") if p.is_dir() else [p]
    return files


def cmd_sweep(args) -> int:
    cfg = effective_config(args)
    grid = {}
    if args.grid:
        with open(args.grid) as fh:
            grid = json.load(fh)
        if not isinstance(grid, dict):
            raise ConfigurationError("grid file must hold a JSON object")
    defaults = {"layers": [cfg.predictor.num_layers], "hidden": [cfg.predictor.hidden],
                "timesteps": [cfg.predictor.time_steps], "passes": [cfg.predictor.passes]}
    for axis in defaults:
        if getattr(args, axis) is not None:
            grid[axis] = getattr(args, axis)
        grid.setdefault(axis, defaults[axis])
    rows, failures = run_sweep(cfg, grid, _expand_inputs(args.inputs), args.out_dir, args.jobs,
                               args.pretrain_corpus)
    print(f"{len(rows) - len(failures)} of {len(rows)} points ok; table in {Path(args.out_dir) / 'sweep_table.tsv'}")
    return EXIT_SWEEP_PARTIAL if failures else EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "conceal": cmd_conceal, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ConfigMismatchError) as exc:
        print(f"lstmplc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, WavFormatError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"lstmplc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"lstmplc: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
