"""Dense float64 linear algebra primitives, activations and seeded RNG.

Matrices are plain 2-d ``numpy.ndarray`` objects in C (row-major) order with
dtype float64; biases are kept as 1 x n row vectors so they broadcast over
batches.  Everything downstream (cells, network, training) builds on these
few functions, and every random draw in the package flows through
:func:`make_rng` / :func:`derive_rng` so that a single 64-bit seed pins the
whole pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "init_params",
    "make_rng",
    "derive_rng",
    "check_finite",
]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises ValueError naming both shapes when the inner dimensions differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable elementwise logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def init_params(rows: int, cols: int, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Create a rows x cols parameter matrix.

    ``uniform-scaled`` draws from U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with
    fan_in = cols; ``zeros`` returns an all-zero matrix (used for biases).
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"init_params needs rows, cols >= 1, got {rows}x{cols}")
    if scheme == "zeros":
        return np.zeros((rows, cols), dtype=np.float64)
    if scheme == "uniform-scaled":
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))
    raise ValueError(f"unknown init scheme {scheme!r}")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    # stable across runs and platforms, unlike hash()
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent substream for (seed, *keys); keys may be ints or strings.

    Used to give every subject/session/purpose its own stream so that
    parallel generation order cannot change the output.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    """Raise ValueError if x contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x
