"""Copy-or-conceal session loop, loss patterns and model checkpoints."""

import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .audio import AudioBuffer, segment_frames
from .lstm import LstmLayerParams, NetworkParams
from .numerics import ConfigurationError, SeededRng
from .optim import AdamState
from .predictor import (PredictorConfig, SampleHistory, build_batch, new_model, predict_frame,
                        train_on_frame)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PLCN"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class IntegrityError(CheckpointError):
    """Truncated or corrupted checkpoint file."""


class UnsupportedVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError, ConfigurationError):
    """Checkpoint network shape differs from the requested configuration."""


# ---------------------------------------------------------------------------
# frames and loss patterns
# ---------------------------------------------------------------------------

@dataclass
class FrameStream:
    frames: np.ndarray  # (n, N)
    availability: np.ndarray  # (n,) bool, True = received
    sample_rate: int
    dropped: int = 0  # trailing samples that did not fill a frame

    def __post_init__(self):
        self.availability = np.asarray(self.availability, dtype=bool)
        if self.frames.ndim != 2 or len(self.availability) != self.frames.shape[0]:
            raise ConfigurationError(
                f"{self.frames.shape[0] if self.frames.ndim == 2 else '?'} frames but "
                f"{len(self.availability)} availability flags")

    @classmethod
    def from_audio(cls, buf: AudioBuffer, frame_len: int, availability=None) -> "FrameStream":
        frames, dropped = segment_frames(buf.samples, frame_len)
        if availability is None:
            availability = np.ones(frames.shape[0], dtype=bool)
        return cls(frames, availability, buf.sample_rate, dropped)

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def generate_loss_pattern(n_frames: int, rate: float, mode: str = "even", seed: int = 0,
                          phase: Optional[int] = None) -> np.ndarray:
    """Availability flags (True = received) for ``n_frames`` frames.

    ``even``: with ``period = round(1/rate)`` the frames ``phase, phase+period, ...``
    are lost; the default phase ``period-1`` puts each loss at the end of its
    period.  ``random``: independent losses with probability ``rate``.
    Frame 0 is always received.
    """
    if n_frames < 1:
        raise ConfigurationError("need at least one frame")
    if not 0 <= rate < 1:
        raise ConfigurationError(f"loss rate must be in [0, 1), got {rate}")
    avail = np.ones(n_frames, dtype=bool)
    if rate == 0:
        return avail
    if mode == "even":
        period = max(1, int(round(1.0 / rate)))
        start = period - 1 if phase is None else int(phase)
        avail[start::period] = False
    elif mode == "random":
        avail = SeededRng(seed).random(n_frames) >= rate
    else:
        raise ConfigurationError(f"unknown loss mode {mode!r}; expected 'even' or 'random'")
    avail[0] = True
    return avail


# ---------------------------------------------------------------------------
# session
# ---------------------------------------------------------------------------

class PlcSession:
    """One model, its optimizer state and sample history, fed frame by frame."""

    def __init__(self, cfg: PredictorConfig, model: Optional[NetworkParams] = None,
                 opt: Optional[AdamState] = None):
        self.cfg = cfg
        self.model = new_model(cfg) if model is None else model
        if self.model.window_len != cfg.window_len or self.model.hidden_size != cfg.hidden \
                or self.model.num_layers != cfg.num_layers:
            raise ConfigMismatchError(
                f"model is {self.model.num_layers}x{self.model.hidden_size} over windows of "
                f"{self.model.window_len}, config wants {cfg.num_layers}x{cfg.hidden} over {cfg.window_len}")
        self.opt = AdamState.fresh(self.model) if opt is None else opt
        self.history = SampleHistory.for_config(cfg)
        self.frame_log = []

    @classmethod
    def from_checkpoint(cls, path, cfg: PredictorConfig, keep_optimizer: bool = False) -> "PlcSession":
        """Session on pretrained weights; the optimizer restarts unless ``keep_optimizer``."""
        ck = load_checkpoint(path, expect=cfg)
        model = ck.model.astype(cfg.dtype)
        opt = ck.opt if keep_optimizer and ck.opt is not None else None
        if opt is not None:
            opt = AdamState(opt.m.astype(cfg.dtype), opt.v.astype(cfg.dtype), opt.t)
        return cls(cfg, model, opt)

    def process_frame(self, frame, available: bool) -> np.ndarray:
        cfg = self.cfg
        t0 = time.perf_counter()
        record = {"index": len(self.frame_log), "lost": not available}
        if available:
            out = np.asarray(frame).copy()
            if cfg.passes > 0:
                res = train_on_frame(self.model, self.opt, build_batch(self.history, frame, cfg), cfg)
                record["losses"] = res.losses
                if res.aborted:
                    record["aborted"] = True
                if res.skipped_steps:
                    record["skipped_steps"] = res.skipped_steps
            else:
                record["losses"] = []
            self.history.push(frame)
        else:
            pred = predict_frame(self.model, self.history, cfg)
            record["pred_rms"] = float(np.sqrt(np.mean(pred.astype(np.float64) ** 2)))
            record["pred_peak"] = float(np.max(np.abs(pred)))
            out = pred.astype(np.float64)
            self.history.push(pred)
        record["wall_ms"] = round(1000.0 * (time.perf_counter() - t0), 3)
        self.frame_log.append(record)
        return out

    def save(self, path, metadata: Optional[dict] = None, include_optimizer: bool = True):
        save_checkpoint(path, self.model, self.cfg, self.opt if include_optimizer else None, metadata)


def process_stream(session: PlcSession, stream: FrameStream, progress=None):
    """Run the copy-or-conceal loop over ``stream``.

    Returns ``(output samples, frame log records for this stream)``.
    """
    if stream.frame_len != session.cfg.frame_len:
        raise ConfigurationError(
            f"stream frames hold {stream.frame_len} samples, session expects {session.cfg.frame_len}")
    start = len(session.frame_log)
    out = np.empty(stream.frames.size, dtype=np.float64)
    N = stream.frame_len
    for k in range(stream.n_frames):
        out[k * N:(k + 1) * N] = session.process_frame(stream.frames[k], bool(stream.availability[k]))
        if progress is not None:
            progress(k, stream.n_frames)
    return out, session.frame_log[start:]


def write_frame_log(records, path):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# Layout (little-endian):
#   b"PLCN" | version u16 | header length u32 | header (UTF-8 JSON: config,
#   metadata, optimizer step) | tensor count u32 | tensors | CRC32 u32
# Tensor: name length u16 | name | rows u32 | cols u32 | rows*cols float32.
# Vectors are stored as (len, 1).  The CRC covers every preceding byte.

@dataclass
class Checkpoint:
    model: NetworkParams
    cfg: PredictorConfig
    opt: Optional[AdamState] = None
    metadata: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    mat = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr.reshape(-1, 1)
    raw = np.ascontiguousarray(mat, dtype="<f4").tobytes()
    enc = name.encode()
    return struct.pack("<H", len(enc)) + enc + struct.pack("<II", *mat.shape) + raw


def save_checkpoint(path, model: NetworkParams, cfg: PredictorConfig, opt: Optional[AdamState] = None,
                    metadata: Optional[dict] = None):
    header = {"config": cfg.to_dict(), "metadata": metadata or {},
              "optimizer_step": None if opt is None else int(opt.t)}
    hbytes = json.dumps(header, sort_keys=True).encode()
    tensors = list(model.tensors())
    if opt is not None:
        tensors += [("adam.m." + n, a) for n, a in opt.m.tensors()]
        tensors += [("adam.v." + n, a) for n, a in opt.v.tensors()]
    body = bytearray(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(hbytes)) + hbytes)
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(body))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc


def _network_from(tensors: dict, prefix: str, cfg: PredictorConfig) -> NetworkParams:
    def get(name, shape):
        key = prefix + name
        if key not in tensors:
            raise IntegrityError(f"checkpoint lacks tensor {key}")
        a = tensors[key]
        if a.size != int(np.prod(shape)):
            raise IntegrityError(f"tensor {key} has {a.size} entries, expected shape {shape}")
        return a.reshape(shape).astype(np.float32)

    H, layers, fan_in = cfg.hidden, [], cfg.window_len
    for k in range(cfg.num_layers):
        layers.append(LstmLayerParams(get(f"layer{k}.W", (4 * H, fan_in)), get(f"layer{k}.U", (4 * H, H)),
                                      get(f"layer{k}.b", (4 * H,))))
        fan_in = H
    return NetworkParams(layers, get("head.w", (H,)), get("head.b", (1,)))


def load_checkpoint(path, expect: Optional[PredictorConfig] = None) -> Checkpoint:
    """Read a checkpoint; tensors come back as float32.

    With ``expect`` given, the stored network shape (window length, hidden
    size, layer count) must match it.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise IntegrityError(f"{path}: file too short to be a checkpoint")
    if data[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: bad magic {data[:4]!r}")
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version}, supported {CHECKPOINT_VERSION}")
    try:
        pos = 10
        header = json.loads(data[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + nlen].decode()
            rows, cols = struct.unpack_from("<II", data, pos + 2 + nlen)
            pos += 10 + nlen
            nbytes = 4 * rows * cols
            if pos + nbytes > len(data) - 4:
                raise IntegrityError(f"{path}: tensor {name} runs past end of file")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=pos).copy()
            pos += nbytes
        cfg = PredictorConfig.from_dict(header["config"])
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: malformed checkpoint ({exc})") from exc

    if expect is not None:
        stored = (cfg.window_len, cfg.hidden, cfg.num_layers)
        wanted = (expect.window_len, expect.hidden, expect.num_layers)
        if stored != wanted:
            raise ConfigMismatchError(
                f"{path}: checkpoint network (window, hidden, layers) = {stored}, "
                f"session configured for {wanted}")
    model = _network_from(tensors, "", cfg)
    opt = None
    if header.get("optimizer_step") is not None:
        opt = AdamState(_network_from(tensors, "adam.m.", cfg), _network_from(tensors, "adam.v.", cfg),
                        int(header["optimizer_step"]))
    return Checkpoint(model, cfg, opt, header.get("metadata", {}))
