"""Dense helpers, activations and the portable seeded generator.

Matrices and vectors are plain numpy arrays.  The working precision is
``float32`` by default; ``float64`` is available for gradient checking.
"""

import numpy as np

from . import _kernels

DEFAULT_DTYPE = np.float32
DTYPES = {"float32": np.float32, "float64": np.float64}


class ConfigurationError(ValueError):
    """Shapes or settings that cannot work together."""


def resolve_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(DTYPES[precision])
        except KeyError:
            raise ConfigurationError(f"unknown precision {precision!r}; expected float32 or float64") from None
    return np.dtype(precision)


def mat_vec_mul(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ConfigurationError(f"cannot multiply {m.shape} matrix by {v.shape} vector")
    return m @ v


def sigmoid(v) -> np.ndarray:
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    return _kernels.sigmoid_numpy(v)


def tanh_act(v) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.result_type(v, np.float32)))


def _splitmix64(x: int):
    x = (x + 0x9E3779B97F4A7C15) & _kernels._MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _kernels._MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _kernels._MASK64
    return x, z ^ (z >> 31)


class SeededRng:
    """xoshiro256** generator whose 256-bit state is expanded from a 64-bit
    seed with splitmix64.

    Uniform doubles take the top 53 bits of each output, so every draw is
    identical on every platform and in both kernel backends.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _kernels._MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        self.state = np.array(words, dtype=np.uint64)

    def next_u64(self, n: int) -> np.ndarray:
        return _kernels.xoshiro_fill(self.state, int(n))

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles uniform in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def uniform_init(rng: SeededRng, rows: int, cols: int, bound: float, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Matrix with entries i.i.d. uniform in [-bound, bound], drawn row-major."""
    if not bound > 0:
        raise ConfigurationError(f"init bound must be positive, got {bound}")
    draws = rng.uniform(-bound, bound, rows * cols)
    return draws.reshape(rows, cols).astype(dtype)
