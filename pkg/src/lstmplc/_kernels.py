"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and the environment
variable ``LSTMPLC_NO_NUMBA`` is unset (or ``0``).  Setting it to ``1``
forces the numpy path, which is also what runs when numba is missing.

Both implementations of every kernel are importable by name (``*_numba``,
``*_numpy``) so the benchmark and the equivalence tests can drive them side
by side regardless of which one is active.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("LSTMPLC_NO_NUMBA", "0") not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

_MASK64 = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# numpy reference paths
# ---------------------------------------------------------------------------

def sigmoid_numpy(x):
    # exp of a non-positive argument only, so no overflow for any finite x
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def _gate_scale(H, dtype):
    # sigmoid(x) = 0.5 * tanh(x / 2) + 0.5, so the three sigmoid gates are
    # evaluated by the same tanh call as the candidate after halving their rows
    scale = np.full(4 * H, 0.5, dtype=dtype)
    scale[2 * H:3 * H] = 1.0
    return scale


def lstm_forward_numpy(proj, index, UT, gates, c, h, tc):
    """Run one LSTM layer over ``T`` steps for ``B`` independent sequences.

    ``proj`` holds input projections plus bias, one row per distinct input;
    ``index[t, b]`` selects the row fed to sequence ``b`` at step ``t``.
    ``h[0]`` and ``c[0]`` must hold the initial state.  Results are written
    into the preallocated ``gates`` (activations, packed i|f|g|o), ``c``,
    ``h`` and ``tc`` (tanh of the new cell state).
    """
    T = index.shape[0]
    H = UT.shape[0]
    scale = _gate_scale(H, proj.dtype)
    proj_s = proj * scale
    UT_s = UT * scale
    rec = np.empty((index.shape[1], 4 * H), dtype=proj.dtype)
    for t in range(T):
        a = gates[t]
        np.take(proj_s, index[t], axis=0, out=a)
        np.matmul(h[t], UT_s, out=rec)
        a += rec
        np.tanh(a, out=a)
        sg = a[:, :2 * H]
        sg *= 0.5
        sg += 0.5
        so = a[:, 3 * H:]
        so *= 0.5
        so += 0.5
        cn = c[t + 1]
        np.multiply(a[:, H:2 * H], c[t], out=cn)
        cn += a[:, :H] * a[:, 2 * H:3 * H]
        np.tanh(cn, out=tc[t])
        np.multiply(so, tc[t], out=h[t + 1])


def lstm_backward_numpy(dh_out, gates, c, tc, U, dz):
    """Backpropagate through one layer; fills ``dz`` with d(loss)/d(pre-activation).

    ``dh_out[t]`` is the gradient arriving at ``h[t + 1]`` from outside the
    recurrence (the head or the layer above).  The initial state is treated as
    a constant, so nothing is returned for it.
    """
    T, B, H = tc.shape
    i = gates[:, :, :H]
    f = gates[:, :, H:2 * H]
    g = gates[:, :, 2 * H:3 * H]
    o = gates[:, :, 3 * H:]
    # per-step factors that do not depend on the backward recursion
    fac = np.empty((T, B, 3, H), dtype=dz.dtype)
    fac[:, :, 0] = g * i * (1.0 - i)
    fac[:, :, 1, :] = c[:-1] * f * (1.0 - f)
    fac[:, :, 2] = i * (1.0 - g * g)
    dz[:, :, 3 * H:] = tc * o * (1.0 - o)  # multiplied by dh inside the loop
    dtc = o * (1.0 - tc * tc)
    dh = np.empty((B, H), dtype=dz.dtype)
    dc = np.zeros((B, H), dtype=dz.dtype)
    dh_next = np.zeros((B, H), dtype=dz.dtype)
    for t in range(T - 1, -1, -1):
        np.add(dh_out[t], dh_next, out=dh)
        dc *= f[t + 1] if t + 1 < T else 0.0
        dc += dh * dtc[t]
        np.multiply(dc[:, None, :], fac[t], out=dz[t, :, :3 * H].reshape(B, 3, H))
        dz[t, :, 3 * H:] *= dh
        np.matmul(dz[t], U, out=dh_next)


def scatter_rows_numpy(dz, index, n_rows):
    """``out[r] = sum of dz[t, b] over all (t, b) with index[t, b] == r``."""
    out = np.zeros((n_rows, dz.shape[2]), dtype=dz.dtype)
    srt = np.sort(index, axis=1)
    if index.shape[1] > 1 and not (srt[:, 1:] != srt[:, :-1]).all():
        np.add.at(out, index.ravel(), dz.reshape(-1, dz.shape[2]))
        return out
    # rows are duplicate-free within each step, so fancy-index accumulation is exact
    for t in range(index.shape[0]):
        out[index[t]] += dz[t]
    return out


def normalized_autocorr_numpy(seg, min_lag, max_lag):
    """Normalized correlation between the last ``max_lag`` samples of ``seg``
    and the same span delayed by each lag in ``[min_lag, max_lag]``."""
    n = seg.shape[0]
    ref = seg[n - max_lag:]
    e_ref = float(ref @ ref)
    out = np.zeros(max_lag - min_lag + 1)
    for k, lag in enumerate(range(min_lag, max_lag + 1)):
        d = seg[n - max_lag - lag:n - lag]
        den = np.sqrt(e_ref * float(d @ d))
        if den > 0.0:
            out[k] = float(ref @ d) / den
    return out


def xoshiro_fill_numpy(state, n):
    """Advance a xoshiro256** state ``n`` times; returns the raw 64-bit outputs.

    ``state`` is a length-4 uint64 array and is updated in place.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.uint64)
    for k in range(n):
        x = (s1 * 5) & _MASK64
        x = ((x << 7) | (x >> 57)) & _MASK64
        out[k] = (x * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out


# ---------------------------------------------------------------------------
# numba paths
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    _TANH_CLAMP = np.float32(7.90531110763549805)
    # fast-math without the no-NaN/no-Inf assumptions, so a diverging network
    # still surfaces as a non-finite loss instead of being silently clamped
    _FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}

    @njit(fastmath=_FAST, inline="always", error_model="numpy", cache=True)
    def _tanh_f32(x):
        # rational minimax fit, about 2 ulp in float32; branch-free so the
        # element loops vectorize (libm tanhf does not)
        x = _TANH_CLAMP if x > _TANH_CLAMP else x  # NaN compares false and passes through
        x = -_TANH_CLAMP if x < -_TANH_CLAMP else x
        x2 = x * x
        p = np.float32(-2.76076847742355e-16)
        p = p * x2 + np.float32(2.00018790482477e-13)
        p = p * x2 + np.float32(-8.60467152213735e-11)
        p = p * x2 + np.float32(5.12229709037114e-08)
        p = p * x2 + np.float32(1.48572235717979e-05)
        p = p * x2 + np.float32(6.37261928875436e-04)
        p = p * x2 + np.float32(4.89352455891786e-03)
        q = np.float32(1.19825839466702e-06)
        q = q * x2 + np.float32(1.18534705686654e-04)
        q = q * x2 + np.float32(2.26843463243900e-03)
        q = q * x2 + np.float32(4.89352518554385e-03)
        return x * p / q

    @njit(inline="always", cache=True)
    def _tanh_f64(x):
        return np.tanh(x)

    def _make_forward(tanh, one, half, fastmath):
        @njit(fastmath=fastmath, error_model="numpy")
        def forward(proj, index, UT, gates, c, h, tc):
            T, B = index.shape
            H = UT.shape[0]
            for t in range(T):
                rec = np.dot(h[t], UT)
                for b in range(B):
                    pr = proj[index[t, b]]
                    rc = rec[b]
                    a = gates[t, b]
                    for k in range(2 * H):
                        a[k] = half * tanh(half * (pr[k] + rc[k])) + half
                    for k in range(2 * H, 3 * H):
                        a[k] = tanh(pr[k] + rc[k])
                    for k in range(3 * H, 4 * H):
                        a[k] = half * tanh(half * (pr[k] + rc[k])) + half
                    cp = c[t, b]
                    cn = c[t + 1, b]
                    th = tc[t, b]
                    hn = h[t + 1, b]
                    for k in range(H):
                        cn[k] = a[H + k] * cp[k] + a[k] * a[2 * H + k]
                        th[k] = tanh(cn[k])
                        hn[k] = a[3 * H + k] * th[k]
        return forward

    def _make_backward(one, fastmath):
        @njit(fastmath=fastmath, error_model="numpy")
        def backward(dh_out, gates, c, tc, U, dz):
            T, B, H = tc.shape
            dh_next = np.zeros((B, H), dtype=dz.dtype)
            dc_next = np.zeros((B, H), dtype=dz.dtype)
            for t in range(T - 1, -1, -1):
                for b in range(B):
                    a = gates[t, b]
                    d = dz[t, b]
                    th = tc[t, b]
                    cp = c[t, b]
                    do = dh_out[t, b]
                    dn = dh_next[b]
                    dcn = dc_next[b]
                    for k in range(H):
                        i = a[k]
                        f = a[H + k]
                        g = a[2 * H + k]
                        o = a[3 * H + k]
                        dh = do[k] + dn[k]
                        dc = dcn[k] + dh * o * (one - th[k] * th[k])
                        d[k] = dc * g * i * (one - i)
                        d[H + k] = dc * cp[k] * f * (one - f)
                        d[2 * H + k] = dc * i * (one - g * g)
                        d[3 * H + k] = dh * th[k] * o * (one - o)
                        dcn[k] = dc * f
                dh_next = np.dot(dz[t], U)
        return backward

    # float64 keeps libm and strict IEEE semantics for gradient checking
    _forward_f32 = _make_forward(_tanh_f32, np.float32(1), np.float32(0.5), _FAST)
    _forward_f64 = _make_forward(_tanh_f64, 1.0, 0.5, False)
    _backward_f32 = _make_backward(np.float32(1), _FAST)
    _backward_f64 = _make_backward(1.0, False)

    def lstm_forward_numba(proj, index, UT, gates, c, h, tc):
        fn = _forward_f32 if proj.dtype == np.float32 else _forward_f64
        fn(proj, index, UT, gates, c, h, tc)

    def lstm_backward_numba(dh_out, gates, c, tc, U, dz):
        fn = _backward_f32 if dz.dtype == np.float32 else _backward_f64
        fn(dh_out, gates, c, tc, U, dz)

    @njit(cache=True)
    def scatter_rows_numba(dz, index, n_rows):
        T, B = index.shape
        G = dz.shape[2]
        out = np.zeros((n_rows, G), dtype=dz.dtype)
        for t in range(T):
            for b in range(B):
                row = index[t, b]
                for k in range(G):
                    out[row, k] += dz[t, b, k]
        return out

    @njit(cache=True)
    def normalized_autocorr_numba(seg, min_lag, max_lag):
        n = seg.shape[0]
        e_ref = 0.0
        for m in range(n - max_lag, n):
            e_ref += seg[m] * seg[m]
        out = np.zeros(max_lag - min_lag + 1)
        for k in range(max_lag - min_lag + 1):
            lag = min_lag + k
            num = 0.0
            e_d = 0.0
            for m in range(n - max_lag, n):
                d = seg[m - lag]
                num += seg[m] * d
                e_d += d * d
            den = np.sqrt(e_ref * e_d)
            if den > 0.0:
                out[k] = num / den
        return out

    @njit(cache=True)
    def _xoshiro_fill_numba(state, out):
        s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
        for k in range(out.shape[0]):
            x = s1 * np.uint64(5)
            x = (x << np.uint64(7)) | (x >> np.uint64(57))
            out[k] = x * np.uint64(9)
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        state[0] = s0
        state[1] = s1
        state[2] = s2
        state[3] = s3

    def xoshiro_fill_numba(state, n):
        out = np.empty(n, dtype=np.uint64)
        _xoshiro_fill_numba(state, out)
        return out

else:  # pragma: no cover
    lstm_forward_numba = lstm_forward_numpy
    lstm_backward_numba = lstm_backward_numpy
    scatter_rows_numba = scatter_rows_numpy
    normalized_autocorr_numba = normalized_autocorr_numpy
    xoshiro_fill_numba = xoshiro_fill_numpy


if USE_NUMBA:
    lstm_forward = lstm_forward_numba
    lstm_backward = lstm_backward_numba
    scatter_rows = scatter_rows_numba
    normalized_autocorr = normalized_autocorr_numba
    xoshiro_fill = xoshiro_fill_numba
else:
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy
    scatter_rows = scatter_rows_numpy
    normalized_autocorr = normalized_autocorr_numpy
    xoshiro_fill = xoshiro_fill_numpy
