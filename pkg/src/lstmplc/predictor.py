"""Sample history, training-batch geometry, online training, frame rollout
and offline pretraining.

Geometry for a target sample at absolute index ``n`` (frame length ``N``,
window length ``L``, ``T`` time steps): step ``t`` (1-based) sees the window
``x[n-L-T+t .. n-T+t-1]``, so the final window ends right before the target
and the window slides by one sample per step.  All ``N`` targets of a frame
share a table of ``N+T-1`` distinct windows; sequence ``j`` at step ``t``
(0-based) uses window ``j+t`` of that table.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lstm import LstmState, NetworkParams, backward_batch, forward_batch, init_network, network_step
from .numerics import ConfigurationError, SeededRng, resolve_dtype
from .optim import AdamConfig, AdamState, adam_step

log = logging.getLogger(__name__)

ROLLOUT_MODES = ("carry", "fresh")
SUPERVISION_MODES = ("last", "all")


@dataclass
class PredictorConfig:
    frame_len: int = 80
    window_len: int = 80
    time_steps: int = 160
    hidden: int = 80
    num_layers: int = 1
    passes: int = 20
    adam: AdamConfig = field(default_factory=AdamConfig)
    init_bound: Optional[float] = None  # None: 1/sqrt(fan_in) per matrix
    forget_bias: float = 1.0
    seed: int = 0
    precision: str = "float32"
    rollout: str = "carry"
    supervise: str = "last"

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        for name in ("frame_len", "window_len", "time_steps", "hidden", "num_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.passes < 0:
            raise ConfigurationError(f"passes must be >= 0, got {self.passes}")
        if self.rollout not in ROLLOUT_MODES:
            raise ConfigurationError(f"rollout must be one of {ROLLOUT_MODES}")
        if self.supervise not in SUPERVISION_MODES:
            raise ConfigurationError(f"supervise must be one of {SUPERVISION_MODES}")
        resolve_dtype(self.precision)

    @property
    def dtype(self):
        return resolve_dtype(self.precision)

    @property
    def context_len(self) -> int:
        """History samples needed before a frame: T + L - 1."""
        return self.time_steps + self.window_len - 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        d = dict(d)
        if "adam" in d and isinstance(d["adam"], dict):
            d["adam"] = AdamConfig(**d["adam"])
        return cls(**d)


def new_model(cfg: PredictorConfig) -> NetworkParams:
    return init_network(SeededRng(cfg.seed), cfg.window_len, cfg.hidden, cfg.num_layers,
                        init_bound=cfg.init_bound, forget_bias=cfg.forget_bias, dtype=cfg.dtype)


class SampleHistory:
    """Ring buffer of the most recent samples; reads before the stream start are 0."""

    def __init__(self, capacity: int, dtype=np.float32):
        self.buf = np.zeros(capacity, dtype=dtype)
        self.count = 0  # absolute index of the next sample

    @classmethod
    def for_config(cls, cfg: PredictorConfig) -> "SampleHistory":
        N = cfg.frame_len
        return cls(N * math.ceil((cfg.time_steps + cfg.window_len) / N), cfg.dtype)

    @property
    def capacity(self) -> int:
        return self.buf.shape[0]

    @property
    def newest(self) -> int:
        return self.count - 1

    def push(self, samples):
        samples = np.asarray(samples, dtype=self.buf.dtype)
        cap = self.capacity
        if samples.shape[0] >= cap:
            self.count += samples.shape[0] - cap
            samples = samples[-cap:]
        pos = (self.count + np.arange(samples.shape[0])) % cap
        self.buf[pos] = samples
        self.count += samples.shape[0]

    def tail(self, n: int) -> np.ndarray:
        if n > self.capacity:
            raise ConfigurationError(f"history holds {self.capacity} samples, {n} requested")
        out = np.zeros(n, dtype=self.buf.dtype)
        have = min(n, self.count)
        if have:
            pos = (self.count - have + np.arange(have)) % self.capacity
            out[n - have:] = self.buf[pos]
        return out


@dataclass
class TrainingBatch:
    signal: np.ndarray  # T+L-1 history samples followed by the N frame samples
    windows: np.ndarray  # (N+T-1, L) distinct windows
    index: np.ndarray  # (T, N) window used by sequence j at step t
    targets: np.ndarray  # (T, N)
    mask: np.ndarray  # (T, N) bool

    @property
    def num_sequences(self) -> int:
        return self.index.shape[1]

    def sequence(self, j: int):
        """Windows (T x L) and per-step targets (None where unsupervised) of sequence ``j``."""
        wins = self.windows[self.index[:, j]]
        tm = [float(self.targets[t, j]) if self.mask[t, j] else None for t in range(self.index.shape[0])]
        return wins, tm


def build_batch(history: SampleHistory, frame, cfg: PredictorConfig) -> TrainingBatch:
    N, L, T = cfg.frame_len, cfg.window_len, cfg.time_steps
    frame = np.asarray(frame, dtype=cfg.dtype)
    if frame.shape != (N,):
        raise ConfigurationError(f"frame must hold {N} samples, got shape {frame.shape}")
    signal = np.concatenate([history.tail(cfg.context_len), frame])
    windows = np.lib.stride_tricks.sliding_window_view(signal[:-1], L)  # N+T-1 rows
    index = np.arange(T)[:, None] + np.arange(N)[None, :]
    if cfg.supervise == "last":
        mask = np.zeros((T, N), dtype=bool)
        mask[-1] = True
        targets = np.zeros((T, N), dtype=cfg.dtype)
        targets[-1] = frame
    else:
        mask = np.ones((T, N), dtype=bool)
        targets = signal[index + L]
    return TrainingBatch(signal, np.ascontiguousarray(windows), index, targets, mask)


@dataclass
class TrainResult:
    losses: list
    aborted: bool = False
    skipped_steps: int = 0


def train_on_frame(model: NetworkParams, opt: AdamState, batch: TrainingBatch,
                   cfg: PredictorConfig, passes: Optional[int] = None,
                   adam: Optional[AdamConfig] = None) -> TrainResult:
    """``passes`` Adam steps on one frame's batch, updating ``model`` and ``opt`` in place.

    The recorded loss of each pass is the batch MSE before that pass's update.
    """
    passes = cfg.passes if passes is None else passes
    adam = cfg.adam if adam is None else adam
    result = TrainResult([])
    for _ in range(passes):
        trace = forward_batch(model, batch.windows, batch.index)
        loss, grads = backward_batch(model, trace, batch.targets, batch.mask)
        if not math.isfinite(loss):
            log.warning("non-finite training loss; abandoning remaining passes for this frame")
            result.aborted = True
            break
        result.losses.append(loss)
        if not adam_step(model, grads, opt, adam):
            log.warning("non-finite gradient; optimizer step skipped")
            result.skipped_steps += 1
    return result


def predict_frame(model: NetworkParams, history: SampleHistory, cfg: PredictorConfig) -> np.ndarray:
    """Autoregressively synthesize the ``N`` samples following ``history``."""
    N, L, T = cfg.frame_len, cfg.window_len, cfg.time_steps
    dtype = model.dtype
    buf = np.concatenate([history.tail(cfg.context_len).astype(dtype), np.zeros(N, dtype)])
    start = cfg.context_len  # buf index of the first synthesized sample
    windows = np.lib.stride_tricks.sliding_window_view(buf, L)  # live view of buf

    if cfg.rollout == "fresh":
        for s in range(N):
            n = start + s
            rows = np.ascontiguousarray(windows[n - L - T + 1:n - L + 1])
            trace = forward_batch(model, rows, np.arange(T).reshape(T, 1))
            buf[n] = np.clip(trace.predictions[-1, 0], -1.0, 1.0)
        return buf[start:].copy()

    if T > 1:
        warm = np.ascontiguousarray(windows[:T - 1])
        trace = forward_batch(model, warm, np.arange(T - 1).reshape(T - 1, 1))
        states = [_state(lt.h[-1, 0], lt.c[-1, 0]) for lt in trace.layers]
    else:
        states = [_state(np.zeros(l.hidden_size, dtype), np.zeros(l.hidden_size, dtype))
                  for l in model.layers]
    for s in range(N):
        n = start + s
        pred, states = network_step(model, states, buf[n - L:n].copy())
        buf[n] = min(1.0, max(-1.0, pred))
    return buf[start:].copy()


def _state(h, c):
    return LstmState(h.copy(), c.copy())


@dataclass
class PretrainReport:
    stream_losses: list = field(default_factory=list)  # (stream id, mean loss, frames)
    skipped: list = field(default_factory=list)  # (stream id, reason)
    steps: int = 0
    order: list = field(default_factory=list)


def pretrain(model: NetworkParams, corpus, cfg: PredictorConfig, opt: Optional[AdamState] = None,
             adam: Optional[AdamConfig] = None) -> PretrainReport:
    """One epoch over ``corpus``, one Adam step per frame, updating ``model`` in place.

    ``corpus`` items are sample arrays or zero-argument loaders returning one;
    a loader that raises ``OSError`` or ``ValueError`` is skipped.  Stream order
    is a seeded shuffle; frame order within a stream is kept and every stream
    starts from an empty (zero) history.  Gradient clipping is off unless
    ``adam`` says otherwise.
    """
    adam = dataclasses.replace(cfg.adam, clip_norm=None) if adam is None else adam
    opt = AdamState.fresh(model) if opt is None else opt
    report = PretrainReport()
    items = list(corpus)
    order = SeededRng(cfg.seed ^ 0x5EED5EED).permutation(len(items))
    report.order = [int(k) for k in order]
    N = cfg.frame_len
    for k in order:
        item = items[k]
        try:
            samples = item() if callable(item) else item
            samples = np.asarray(samples, dtype=cfg.dtype)
            if samples.ndim != 1:
                raise ValueError(f"stream must be 1-D, got shape {samples.shape}")
        except (OSError, ValueError) as exc:
            log.warning("skipping corpus stream %d: %s", k, exc)
            report.skipped.append((int(k), str(exc)))
            continue
        history = SampleHistory.for_config(cfg)
        losses = []
        for f in range(samples.shape[0] // N):
            frame = samples[f * N:(f + 1) * N]
            res = train_on_frame(model, opt, build_batch(history, frame, cfg), cfg, passes=1, adam=adam)
            losses += res.losses
            report.steps += 1
            history.push(frame)
        mean = float(np.mean(losses)) if losses else float("nan")
        report.stream_losses.append((int(k), mean, len(losses)))
    return report
