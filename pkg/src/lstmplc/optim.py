"""Adam over ``NetworkParams``."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lstm import NetworkParams
from .numerics import ConfigurationError


@dataclass
class AdamConfig:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.alpha > 0 and self.epsilon > 0):
            raise ConfigurationError(f"invalid Adam settings: {self}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigurationError("clip_norm must be positive or None")


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams
    t: int = 0

    @classmethod
    def fresh(cls, params: NetworkParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def global_norm(grads: NetworkParams) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for _, g in grads.tensors()))


def clip_gradients(grads: NetworkParams, clip_norm) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``clip_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        for _, g in grads.tensors():
            g *= g.dtype.type(scale)
    return norm


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState, cfg: AdamConfig) -> bool:
    """Apply one Adam update in place.

    Returns False (leaving params and state untouched) if any gradient entry
    is non-finite.
    """
    pairs = list(zip(params.tensors(), grads.tensors(), state.m.tensors(), state.v.tensors()))
    for (pn, p), (gn, g), _, _ in pairs:
        if p.shape != g.shape:
            raise ConfigurationError(f"gradient {gn} has shape {g.shape}, parameter has {p.shape}")
    if not all(np.isfinite(g).all() for _, g in grads.tensors()):
        return False
    if cfg.clip_norm is not None:
        grads = grads.copy()
        clip_gradients(grads, cfg.clip_norm)
        pairs = list(zip(params.tensors(), grads.tensors(), state.m.tensors(), state.v.tensors()))

    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for (_, p), (_, g), (_, m), (_, v) in pairs:
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= (cfg.alpha * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)).astype(p.dtype)
    return True


def reset_optimizer(state: AdamState) -> AdamState:
    for _, a in state.m.tensors() + state.v.tensors():
        a[...] = 0
    state.t = 0
    return state
