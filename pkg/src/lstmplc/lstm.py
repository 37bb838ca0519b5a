"""Stacked vanilla LSTM (no peepholes) with a linear regression head.

Gate pre-activations are packed along a ``4H`` axis in the fixed order
input | forget | candidate | output.  That order is part of the checkpoint
format and must not change.

Every sequence starts from the zero state.  The batched forward pass feeds
layer 0 from a table of distinct input windows plus an index array
``index[t, b]``; overlapping training sequences share most of their windows,
so the input projection is computed once per distinct window.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import DEFAULT_DTYPE, ConfigurationError, SeededRng, sigmoid, uniform_init


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4H, input_size)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def check(self):
        H = self.hidden_size
        if self.U.shape != (4 * H, H) or self.W.shape[0] != 4 * H or self.b.shape != (4 * H,):
            raise ConfigurationError(
                f"inconsistent layer shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )


@dataclass
class NetworkParams:
    layers: list
    w_out: np.ndarray  # (H,)
    b_out: np.ndarray  # (1,)

    @property
    def window_len(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_size(self) -> int:
        return self.layers[-1].hidden_size

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dtype(self):
        return self.w_out.dtype

    def tensors(self):
        """``(name, array)`` pairs in canonical order; arrays are live views."""
        out = []
        for k, layer in enumerate(self.layers):
            out += [(f"layer{k}.W", layer.W), (f"layer{k}.U", layer.U), (f"layer{k}.b", layer.b)]
        out += [("head.w", self.w_out), ("head.b", self.b_out)]
        return out

    def map(self, fn) -> "NetworkParams":
        return NetworkParams(
            layers=[LstmLayerParams(fn(l.W), fn(l.U), fn(l.b)) for l in self.layers],
            w_out=fn(self.w_out),
            b_out=fn(self.b_out),
        )

    def copy(self) -> "NetworkParams":
        return self.map(np.copy)

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    def astype(self, dtype) -> "NetworkParams":
        return self.map(lambda a: a.astype(dtype))

    def check(self):
        for k, layer in enumerate(self.layers):
            layer.check()
            if k > 0 and layer.input_size != self.layers[k - 1].hidden_size:
                raise ConfigurationError(
                    f"layer {k} expects input {layer.input_size}, "
                    f"layer {k - 1} produces {self.layers[k - 1].hidden_size}"
                )
        if self.w_out.shape != (self.hidden_size,) or self.b_out.shape != (1,):
            raise ConfigurationError("head shape does not match the top layer")

    def equals(self, other: "NetworkParams") -> bool:
        """Bitwise equality of every tensor."""
        a, b = self.tensors(), other.tensors()
        return len(a) == len(b) and all(
            na == nb and x.shape == y.shape and x.dtype == y.dtype and x.tobytes() == y.tobytes()
            for (na, x), (nb, y) in zip(a, b)
        )


Gradients = NetworkParams


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class LayerTrace:
    proj: np.ndarray  # (rows, 4H) input projection + bias
    index: np.ndarray  # (T, B) row of ``proj`` used at each step
    gates: np.ndarray  # (T, B, 4H) activations
    c: np.ndarray  # (T + 1, B, H), c[0] is the initial state
    h: np.ndarray  # (T + 1, B, H)
    tc: np.ndarray  # (T, B, H) tanh(c[t + 1])


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (rows, L) distinct layer-0 windows
    index: np.ndarray  # (T, B)
    layers: list = field(default_factory=list)
    predictions: np.ndarray = None  # (T, B)

    @property
    def steps(self) -> int:
        return self.index.shape[0]


def init_network(rng: SeededRng, window_len: int, hidden: int, num_layers: int,
                 init_bound=None, forget_bias: float = 1.0, dtype=DEFAULT_DTYPE) -> NetworkParams:
    """Random network; matrices drawn in order W0, U0, W1, U1, ..., head.

    Each matrix is uniform in ``[-b, b]`` with ``b = 1/sqrt(fan_in)`` unless
    ``init_bound`` fixes it.  Biases are zero except the forget gate.
    """
    if min(window_len, hidden, num_layers) < 1:
        raise ConfigurationError("window length, hidden size and layer count must be >= 1")
    layers = []
    fan_in = window_len
    for _ in range(num_layers):
        bw = init_bound or 1.0 / np.sqrt(fan_in)
        bu = init_bound or 1.0 / np.sqrt(hidden)
        W = uniform_init(rng, 4 * hidden, fan_in, bw, dtype)
        U = uniform_init(rng, 4 * hidden, hidden, bu, dtype)
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden:2 * hidden] = forget_bias
        layers.append(LstmLayerParams(W, U, b))
        fan_in = hidden
    w_out = uniform_init(rng, 1, hidden, init_bound or 1.0 / np.sqrt(hidden), dtype)[0]
    return NetworkParams(layers, w_out, np.zeros(1, dtype=dtype))


def zero_network(window_len: int, hidden: int, num_layers: int, dtype=DEFAULT_DTYPE) -> NetworkParams:
    layers = []
    fan_in = window_len
    for _ in range(num_layers):
        layers.append(LstmLayerParams(
            np.zeros((4 * hidden, fan_in), dtype), np.zeros((4 * hidden, hidden), dtype),
            np.zeros(4 * hidden, dtype)))
        fan_in = hidden
    return NetworkParams(layers, np.zeros(hidden, dtype), np.zeros(1, dtype))


def zero_state(net: NetworkParams) -> list:
    return [LstmState(np.zeros(l.hidden_size, net.dtype), np.zeros(l.hidden_size, net.dtype))
            for l in net.layers]


def layer_step(p: LstmLayerParams, s: LstmState, x: np.ndarray):
    """One time step of one layer for a single sequence.

    Returns the new state and a dict with the gate activations.
    """
    if x.shape != (p.input_size,):
        raise ConfigurationError(f"layer expects input of length {p.input_size}, got {x.shape}")
    H = p.hidden_size
    z = p.W @ x + p.U @ s.h + p.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c = f * s.c + i * g
    h = o * np.tanh(c)
    return LstmState(h, c), {"i": i, "f": f, "g": g, "o": o, "z": z}


def network_step(net: NetworkParams, states: list, x: np.ndarray):
    """Advance every layer by one step; returns (prediction, new states)."""
    new = []
    for layer, s in zip(net.layers, states):
        s, _ = layer_step(layer, s, x)
        new.append(s)
        x = s.h
    return float(net.w_out @ x + net.b_out[0]), new


def forward_batch(net: NetworkParams, windows: np.ndarray, index: np.ndarray,
                  init_states=None) -> ForwardTrace:
    """Batched forward pass.

    ``windows`` is a ``(rows, L)`` table of distinct input windows and
    ``index[t, b]`` picks the window for sequence ``b`` at step ``t``.
    ``init_states`` optionally gives per-layer ``(h0, c0)`` arrays of shape
    ``(B, H)``; the default (and the training setting) is all zeros.
    """
    dtype = net.dtype
    if windows.ndim != 2 or windows.shape[1] != net.window_len:
        raise ConfigurationError(
            f"network expects windows of length {net.window_len}, got shape {windows.shape}")
    index = np.ascontiguousarray(index, dtype=np.int64)
    T, B = index.shape
    if T < 1:
        raise ConfigurationError("need at least one time step")
    windows = np.ascontiguousarray(windows, dtype=dtype)
    trace = ForwardTrace(inputs=windows, index=index)
    proj = windows @ net.layers[0].W.T + net.layers[0].b
    idx = index
    for k, layer in enumerate(net.layers):
        H = layer.hidden_size
        gates = np.empty((T, B, 4 * H), dtype)
        c = np.empty((T + 1, B, H), dtype)
        h = np.empty((T + 1, B, H), dtype)
        tc = np.empty((T, B, H), dtype)
        if init_states is None:
            c[0] = 0
            h[0] = 0
        else:
            h[0], c[0] = init_states[k]
        proj = np.ascontiguousarray(proj, dtype=dtype)
        _kernels.lstm_forward(proj, idx, np.ascontiguousarray(layer.U.T), gates, c, h, tc)
        trace.layers.append(LayerTrace(proj, idx, gates, c, h, tc))
        if k + 1 < len(net.layers):
            nxt = net.layers[k + 1]
            proj = h[1:].reshape(T * B, H) @ nxt.W.T + nxt.b
            idx = np.arange(T * B, dtype=np.int64).reshape(T, B)
    top = trace.layers[-1].h[1:]
    trace.predictions = top @ net.w_out + net.b_out[0]
    return trace


def sequence_windows(windows) -> tuple:
    """Table and index for one sequence given as ``T`` windows."""
    windows = np.asarray(windows)
    if windows.ndim != 2:
        raise ConfigurationError("expected a sequence of windows (T x L)")
    T = windows.shape[0]
    return windows, np.arange(T, dtype=np.int64).reshape(T, 1)


def network_forward(net: NetworkParams, windows):
    """Run one zero-initialized sequence; returns ``(predictions[T], trace)``."""
    table, index = sequence_windows(windows)
    if table.shape[0] == 0:
        raise ConfigurationError("windows must be nonempty")
    trace = forward_batch(net, table, index)
    return trace.predictions[:, 0].copy(), trace


def masked_mse(predictions, targets, mask) -> float:
    count = int(mask.sum())
    if count == 0:
        return 0.0
    err = np.where(mask, predictions - targets, 0.0)
    return float((err.astype(np.float64) ** 2).sum() / count)


def backward_batch(net: NetworkParams, trace: ForwardTrace, targets: np.ndarray, mask: np.ndarray):
    """Gradients of the masked MSE (mean over unmasked ``(t, b)`` entries).

    ``targets`` and ``mask`` have shape ``(T, B)``.  Returns ``(loss, grads)``.
    """
    dtype = net.dtype
    T, B = trace.index.shape
    grads = net.zeros_like()
    count = int(mask.sum())
    if count == 0:
        return 0.0, grads
    err = np.where(mask, trace.predictions - targets, 0.0).astype(dtype)
    loss = float((err.astype(np.float64) ** 2).sum() / count)
    dpred = (2.0 / count) * err  # (T, B)

    top = trace.layers[-1]
    grads.w_out[:] = np.tensordot(dpred, top.h[1:], axes=([0, 1], [0, 1]))
    grads.b_out[0] = dpred.sum()
    dh_out = dpred[:, :, None] * net.w_out[None, None, :]
    dh_out = dh_out.astype(dtype)

    for k in range(len(net.layers) - 1, -1, -1):
        layer, lt, g = net.layers[k], trace.layers[k], grads.layers[k]
        H = layer.hidden_size
        dz = np.empty((T, B, 4 * H), dtype)
        _kernels.lstm_backward(np.ascontiguousarray(dh_out), lt.gates, lt.c, lt.tc,
                               np.ascontiguousarray(layer.U), dz)
        dz2 = dz.reshape(T * B, 4 * H)
        g.U[:] = dz2.T @ lt.h[:-1].reshape(T * B, H)
        g.b[:] = dz2.sum(axis=0)
        if k == 0:
            drow = _kernels.scatter_rows(dz, lt.index, trace.inputs.shape[0])
            g.W[:] = drow.T @ trace.inputs
        else:
            below = trace.layers[k - 1].h[1:].reshape(T * B, -1)
            g.W[:] = dz2.T @ below
            dh_out = (dz2 @ layer.W).reshape(T, B, -1)
    return loss, grads


def bptt_backward(net: NetworkParams, trace: ForwardTrace, target_mask) -> Gradients:
    """Gradients for a single-sequence trace; ``target_mask[t]`` is a target or None."""
    T = trace.steps
    if len(target_mask) != T:
        raise ConfigurationError(f"target mask has {len(target_mask)} entries for {T} steps")
    mask = np.array([v is not None for v in target_mask]).reshape(T, 1)
    targets = np.array([0.0 if v is None else v for v in target_mask], dtype=net.dtype).reshape(T, 1)
    return backward_batch(net, trace, targets, mask)[1]
