"""The numba and pure-numpy kernels must agree; both are imported directly."""

import numpy as np
import pytest

from lstmplc import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def _forward_inputs(rng, T, B, H, rows, dtype):
    proj = rng.normal(0, 1.0, (rows, 4 * H)).astype(dtype)
    index = rng.integers(0, rows, (T, B)).astype(np.int64)
    UT = rng.normal(0, 0.4, (H, 4 * H)).astype(dtype)
    return proj, index, UT


def _run_forward(fn, proj, index, UT, c0, h0):
    T, B = index.shape
    H = UT.shape[0]
    dtype = proj.dtype
    gates = np.empty((T, B, 4 * H), dtype)
    c = np.empty((T + 1, B, H), dtype)
    h = np.empty((T + 1, B, H), dtype)
    tc = np.empty((T, B, H), dtype)
    c[0], h[0] = c0, h0
    fn(proj.copy(), index, UT.copy(), gates, c, h, tc)
    return gates, c, h, tc


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-13), (np.float32, 2e-6)])
@pytest.mark.parametrize("shape", [(1, 1, 1), (5, 3, 4), (12, 7, 9)])
def test_forward_backends_agree(dtype, tol, shape):
    T, B, H = shape
    rng = np.random.default_rng(sum(shape))
    proj, index, UT = _forward_inputs(rng, T, B, H, T + B, dtype)
    c0 = rng.normal(0, 0.5, (B, H)).astype(dtype)
    h0 = np.tanh(rng.normal(0, 0.5, (B, H))).astype(dtype)
    a = _run_forward(K.lstm_forward_numpy, proj, index, UT, c0, h0)
    b = _run_forward(K.lstm_forward_numba, proj, index, UT, c0, h0)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=0, atol=tol)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_backward_backends_agree(dtype, tol):
    T, B, H = 9, 4, 6
    rng = np.random.default_rng(11)
    proj, index, UT = _forward_inputs(rng, T, B, H, 20, dtype)
    z = np.zeros((B, H), dtype)
    gates, c, h, tc = _run_forward(K.lstm_forward_numpy, proj, index, UT, z, z)
    dh = rng.normal(0, 1, (T, B, H)).astype(dtype)
    U = np.ascontiguousarray(UT.T)
    dz_a = np.empty((T, B, 4 * H), dtype)
    dz_b = np.empty((T, B, 4 * H), dtype)
    K.lstm_backward_numpy(dh, gates, c, tc, U, dz_a)
    K.lstm_backward_numba(dh, gates, c, tc, U, dz_b)
    np.testing.assert_allclose(dz_a, dz_b, rtol=0, atol=tol)


@pytest.mark.parametrize("unique", [True, False])
def test_scatter_backends_agree(unique):
    rng = np.random.default_rng(2)
    T, B, W = 6, 5, 24
    dz = rng.normal(size=(T, B, W))
    if unique:
        index = (np.arange(T)[:, None] + np.arange(B)[None, :]) * 1
        index = index.astype(np.int64)
        rows = T + B - 1
    else:
        index = rng.integers(0, 4, (T, B)).astype(np.int64)
        rows = 4
    a = K.scatter_rows_numpy(dz, index, rows)
    b = K.scatter_rows_numba(dz, index, rows)
    ref = np.zeros((rows, W))
    for t in range(T):
        for j in range(B):
            ref[index[t, j]] += dz[t, j]
    np.testing.assert_allclose(a, ref, atol=1e-12)
    np.testing.assert_allclose(b, ref, atol=1e-12)


def test_autocorr_backends_agree():
    rng = np.random.default_rng(4)
    seg = rng.normal(size=240)
    np.testing.assert_allclose(K.normalized_autocorr_numpy(seg, 40, 120),
                               K.normalized_autocorr_numba(seg, 40, 120), atol=1e-12)


def test_xoshiro_backends_agree():
    s1 = np.array([1, 2, 3, 2**63 + 4], dtype=np.uint64)
    s2 = s1.copy()
    a = K.xoshiro_fill_numpy(s1, 500)
    b = K.xoshiro_fill_numba(s2, 500)
    assert np.array_equal(a, b)
    assert np.array_equal(s1, s2)


def test_float32_tanh_accuracy():
    x = np.linspace(-12, 12, 20001).astype(np.float32)
    proj = np.zeros((x.size, 4), np.float32)
    proj[:, 2] = x  # candidate gate row -> tanh
    idx = np.arange(x.size, dtype=np.int64).reshape(1, -1)
    g = np.empty((1, x.size, 4), np.float32)
    c = np.zeros((2, x.size, 1), np.float32)
    h = np.zeros((2, x.size, 1), np.float32)
    tc = np.empty((1, x.size, 1), np.float32)
    K.lstm_forward_numba(proj.copy(), idx, np.zeros((1, 4), np.float32), g, c, h, tc)
    np.testing.assert_allclose(g[0, :, 2], np.tanh(x.astype(np.float64)), rtol=0, atol=1e-6)
    np.testing.assert_allclose(g[0, :, 0], 0.5, atol=1e-7)  # sigmoid(0)


def test_backend_flag_reported():
    import lstmplc
    assert lstmplc.BACKEND in ("numba", "numpy")
    assert lstmplc.BACKEND == K.BACKEND


@pytest.mark.parametrize("fn", [K.lstm_forward_numpy, K.lstm_forward_numba])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_nan_input_propagates(fn, dtype):
    """A diverged projection must show up as NaN, not be absorbed by saturation."""
    proj = np.zeros((1, 8), dtype)
    proj[0, 2] = np.nan  # candidate gate of unit 0
    g, c, h, tc = _run_forward(fn, proj, np.zeros((1, 1), np.int64), np.zeros((2, 8), dtype),
                               np.zeros((1, 2), dtype), np.zeros((1, 2), dtype))
    assert np.isnan(h[1, 0, 0]) and np.isfinite(h[1, 0, 1])
