"""Counter-based random streams and order-fixed reductions.

Each path owns a Philox stream keyed by ``(path_index, seed)``, so its draws
do not depend on how paths are grouped into batches or scheduled on threads.
Within a stream the layout is fixed: ``steps * noise_dim`` standard normals
(row-major by step) followed by ``steps`` uniforms for the bridge test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SEED = 20240917
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStreamSpec:
    seed: int
    index: int

    def generator(self) -> np.random.Generator:
        return path_generator(self.seed, self.index)


def path_generator(seed: int, index: int) -> np.random.Generator:
    if index < 0:
        raise ValueError("path index must be nonnegative")
    key = np.array([index & MASK64, seed & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_noise(seed: int, indices, steps: int, noise_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard normals ``(n, steps, noise_dim)`` and uniforms ``(n, steps)``."""
    indices = np.asarray(indices, dtype=np.int64)
    normals = np.empty((len(indices), steps, noise_dim))
    uniforms = np.empty((len(indices), steps))
    for row, i in enumerate(indices):
        g = path_generator(seed, int(i))
        normals[row] = g.standard_normal((steps, noise_dim))
        uniforms[row] = g.random(steps)
    return normals, uniforms


def stable_sum(values) -> float:
    """Correctly rounded sum in index order (``math.fsum``)."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def stable_mean(values) -> float:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("mean of an empty sample")
    return stable_sum(values) / values.size


def stable_mean_se(values) -> tuple[float, float]:
    """Mean and standard error ``std(ddof=1) / sqrt(n)`` with compensated sums."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    mean = stable_mean(values)
    if n < 2:
        return mean, 0.0
    var = stable_sum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)
