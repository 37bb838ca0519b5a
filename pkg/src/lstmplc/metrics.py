"""Lost-frame quality metrics and the two reference concealers.

``periodic_extrapolation`` is a simplified pitch-repetition concealer in the
spirit of ITU-T G.711 Appendix I.  It is NOT a conformant implementation of
that recommendation and must not be reported as one.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels

SNR_FLOOR_DB = -10.0
SNR_CEIL_DB = 35.0
SILENCE_ENERGY = 1e-12


@dataclass
class FrameMetric:
    index: int
    mse: float
    snr_db: float  # clamped to [SNR_FLOOR_DB, SNR_CEIL_DB]; NaN for silent frames
    silent: bool


@dataclass
class MetricsReport:
    frames: list = field(default_factory=list)
    mean_mse: float = float("nan")
    seg_snr_db: float = float("nan")
    n_lost: int = 0
    n_silent: int = 0
    metadata: dict = field(default_factory=dict)

    def recompute(self):
        """Aggregates derived from ``frames`` (what the stored fields must equal)."""
        mses = [f.mse for f in self.frames]
        snrs = [f.snr_db for f in self.frames if not f.silent]
        return {
            "mean_mse": float(np.mean(mses)) if mses else float("nan"),
            "seg_snr_db": float(np.mean(snrs)) if snrs else float("nan"),
            "n_lost": len(self.frames),
            "n_silent": sum(f.silent for f in self.frames),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        return _json_safe(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        frames = [FrameMetric(f["index"], _num(f["mse"]), _num(f["snr_db"]), f["silent"]) for f in d["frames"]]
        return cls(frames, _num(d["mean_mse"]), _num(d["seg_snr_db"]), d["n_lost"], d["n_silent"],
                   d.get("metadata", {}))


def _num(v):
    return float("nan") if v is None else float(v)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def frame_snr_db(ref, out) -> float:
    """Unclamped SNR of one frame; +inf for a perfect match, NaN for silent ``ref``."""
    ref = np.asarray(ref, dtype=np.float64)
    err = ref - np.asarray(out, dtype=np.float64)
    sig = float(ref @ ref)
    noise = float(err @ err)
    if sig < SILENCE_ENERGY:
        return float("nan")
    if noise == 0.0:
        return float("inf")
    return 10.0 * math.log10(sig / noise)


def lost_frame_metrics(reference, concealed, availability, frame_len: int,
                       start_frame: int = 0, metadata=None) -> MetricsReport:
    """Per-lost-frame MSE and SNR plus their aggregates.

    Only frames flagged lost (and with index >= ``start_frame``) are scored.
    Silent reference frames are kept in the MSE mean but left out of the
    segmental SNR.
    """
    reference = np.asarray(reference, dtype=np.float64)
    concealed = np.asarray(concealed, dtype=np.float64)
    availability = np.asarray(availability, dtype=bool)
    if reference.shape != concealed.shape:
        raise ValueError(f"reference has {reference.shape[0]} samples, concealed has {concealed.shape[0]}")
    if availability.shape[0] * frame_len > reference.shape[0]:
        raise ValueError(f"{availability.shape[0]} frames of {frame_len} exceed {reference.shape[0]} samples")
    report = MetricsReport(metadata=dict(metadata or {}))
    for k in np.flatnonzero(~availability):
        if k < start_frame:
            continue
        ref = reference[k * frame_len:(k + 1) * frame_len]
        out = concealed[k * frame_len:(k + 1) * frame_len]
        err = ref - out
        snr = frame_snr_db(ref, out)
        silent = math.isnan(snr)
        if not silent:
            snr = min(SNR_CEIL_DB, max(SNR_FLOOR_DB, snr))
        report.frames.append(FrameMetric(int(k), float(np.mean(err * err)), snr, silent))
    agg = report.recompute()
    report.mean_mse, report.seg_snr_db = agg["mean_mse"], agg["seg_snr_db"]
    report.n_lost, report.n_silent = agg["n_lost"], agg["n_silent"]
    return report


def zero_fill(frames, availability) -> np.ndarray:
    """Received frames copied, lost frames replaced by silence."""
    frames = np.asarray(frames, dtype=np.float64)
    out = frames.copy()
    out[~np.asarray(availability, dtype=bool)] = 0.0
    return out.reshape(-1)


def estimate_pitch(history, min_pitch: int = 40, max_pitch: int = 120) -> int:
    """Lag in ``[min_pitch, max_pitch]`` maximizing the normalized autocorrelation
    of the last ``2 * max_pitch`` samples; 0 if that span is silent.

    Near-ties (within 1e-6) go to the shorter lag so that exact multiples of
    the period do not win by rounding.
    """
    if not 1 <= min_pitch <= max_pitch:
        raise ValueError("need 1 <= min_pitch <= max_pitch")
    seg = np.zeros(2 * max_pitch)
    h = np.asarray(history, dtype=np.float64)[-2 * max_pitch:]
    seg[seg.shape[0] - h.shape[0]:] = h
    if not np.any(seg):
        return 0
    r = _kernels.normalized_autocorr(seg, min_pitch, max_pitch)
    best = r.max()
    return int(min_pitch + np.flatnonzero(r >= best - 1e-6)[0])


def periodic_extrapolation(frames, availability, min_pitch: int = 40, max_pitch: int = 120,
                           attenuation: float = 0.2) -> np.ndarray:
    """Pitch-repetition concealment (G.711 Appendix I inspired, non-conformant).

    On the first frame of a loss burst the pitch period ``p`` is estimated
    from the output so far and the last ``p`` samples are repeated.  The first
    ``ceil(p/4)`` samples cross-fade linearly from the cycle before last into
    the last cycle to smooth cycle-to-cycle jitter at the junction.  Each
    further lost frame in a burst is scaled down by ``attenuation`` more.
    """
    frames = np.asarray(frames, dtype=np.float64)
    availability = np.asarray(availability, dtype=bool)
    n, N = frames.shape
    out = np.zeros((n, N))
    run = 0
    pitch = 0
    phase = 0
    cycle = prev = None
    for k in range(n):
        if availability[k]:
            out[k] = frames[k]
            run = 0
            continue
        if run == 0:
            hist = out[:k].reshape(-1)[-2 * max_pitch:]
            if hist.shape[0] < 2 * max_pitch:
                hist = np.concatenate([np.zeros(2 * max_pitch - hist.shape[0]), hist])
            pitch = estimate_pitch(hist, min_pitch, max_pitch)
            if pitch:
                cycle = hist[-pitch:].copy()
                prev = hist[-2 * pitch:-pitch].copy()
            phase = 0
        gain = max(0.0, 1.0 - attenuation * run)
        if pitch == 0 or gain == 0.0:
            out[k] = 0.0
        else:
            idx = (phase + np.arange(N)) % pitch
            frame = cycle[idx]
            if run == 0:
                fade = math.ceil(pitch / 4)
                m = min(fade, N)
                w = np.arange(1, m + 1) / (fade + 1)
                frame[:m] = (1.0 - w) * prev[idx[:m]] + w * frame[:m]
            out[k] = gain * frame
            phase = (phase + N) % pitch
        run += 1
    return out.reshape(-1)
