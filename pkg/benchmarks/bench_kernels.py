"""Time the numba and pure-numpy kernel backends side by side.

The backend is fixed at import time, so each one is measured in its own
subprocess (``LSTMPLC_NO_NUMBA`` set or unset).  Reported per configuration:
one training pass (forward + backward + Adam) on a full frame batch, and one
lost-frame prediction.

    python3 benchmarks/bench_kernels.py                # default shapes
    python3 benchmarks/bench_kernels.py --hidden 40 --timesteps 80 --repeat 5
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import lstmplc
from lstmplc.optim import AdamState, adam_step
from lstmplc.predictor import PredictorConfig, SampleHistory, build_batch, new_model, predict_frame
from lstmplc.lstm import backward_batch, forward_batch

args = json.loads(sys.argv[1])
cfg = PredictorConfig(hidden=args["hidden"], window_len=args["hidden"], time_steps=args["timesteps"],
                      num_layers=args["layers"], precision=args["precision"], seed=1)
rng = np.random.default_rng(0)
hist = SampleHistory.for_config(cfg)
hist.push((0.3 * rng.standard_normal(hist.capacity)).astype(cfg.dtype))
frame = (0.3 * rng.standard_normal(cfg.frame_len)).astype(cfg.dtype)
model = new_model(cfg)
opt = AdamState.fresh(model)
batch = build_batch(hist, frame, cfg)

def one_pass():
    tr = forward_batch(model, batch.windows, batch.index)
    _, g = backward_batch(model, tr, batch.targets, batch.mask)
    adam_step(model, g, opt, cfg.adam)

def best(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter(); fn(); times.append(time.perf_counter() - t)
    return min(times)

out = {"backend": lstmplc.BACKEND,
       "train_pass_s": best(one_pass, args["repeat"]),
       "predict_frame_s": best(lambda: predict_frame(model, hist, cfg), args["repeat"])}
print(json.dumps(out))
"""


def run(backend: str, params: dict) -> dict:
    env = dict(os.environ)
    if backend == "numpy":
        env["LSTMPLC_NO_NUMBA"] = "1"
    else:
        env.pop("LSTMPLC_NO_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", WORKER, json.dumps(params)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--hidden", type=int, nargs="+", default=[40, 80])
    ap.add_argument("--timesteps", type=int, nargs="+", default=[80, 160])
    ap.add_argument("--layers", type=int, default=1)
    ap.add_argument("--precision", default="float32", choices=("float32", "float64"))
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    print(f"{'H=L':>5} {'T':>5} {'backend':>8} {'pass [ms]':>10} {'predict [ms]':>13} {'speedup':>8}")
    for H in args.hidden:
        for T in args.timesteps:
            params = {"hidden": H, "timesteps": T, "layers": args.layers, "precision": args.precision,
                      "repeat": args.repeat}
            results = {b: run(b, params) for b in ("numpy", "numba")}
            if results["numba"]["backend"] != "numba":
                print("numba is not importable; only the numpy backend was measured")
            base = results["numpy"]["train_pass_s"]
            for b, r in results.items():
                print(f"{H:>5} {T:>5} {r['backend']:>8} {1e3 * r['train_pass_s']:>10.1f} "
                      f"{1e3 * r['predict_frame_s']:>13.1f} {base / r['train_pass_s']:>7.2f}x")


if __name__ == "__main__":
    main()
