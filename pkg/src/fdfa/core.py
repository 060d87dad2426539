"""Dense linear algebra, seeded Gaussian streams and log-log fitting.

Matrices and vectors are plain ``float64`` numpy arrays.  The helpers here
add the shape checks the rest of the package relies on; they never
broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

Matrix = np.ndarray
Vector = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def as_vector(x, name: str = "vector") -> Vector:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"{name} must be a non-empty 1-d array, got shape {arr.shape}")
    return arr


def as_matrix(a, name: str = "matrix") -> Matrix:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ShapeError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    return arr


class RngStream:
    """Deterministic Gaussian source identified by ``(seed, stream_id)``.

    Streams with different ids are derived through :class:`numpy.random.SeedSequence`
    spawn keys, so they are statistically independent while remaining
    reproducible.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream; does not advance this stream."""
        # fold the child index into the stream id without colliding with
        # small sibling ids
        return RngStream(self.seed, (self.stream_id + 1) * 1_000_003 + int(index))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_standard_normal(rng: RngStream, rows: int, cols: int) -> Matrix:
    if rows < 1 or cols < 1:
        raise ShapeError(f"cannot sample a ({rows}, {cols}) matrix")
    return rng.normal((rows, cols))


def outer(u: Vector, v: Vector) -> Matrix:
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    return np.multiply.outer(u, v)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: A{a.shape} and B{b.shape} do not conform")
    return a @ b


def matvec(a: Matrix, x: Vector) -> Vector:
    a = as_matrix(a, "A")
    x = as_vector(x, "x")
    if a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: A{a.shape} and x{x.shape} do not conform")
    return a @ x


def hadamard(u: Vector, v: Vector) -> Vector:
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"hadamard: u{u.shape} and v{v.shape} differ")
    return u * v


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr_slope: float


def loglog_fit(points: Iterable[Sequence[float]]) -> FitResult:
    """Ordinary least squares of ``ln y`` on ``ln x``.

    The slope is the exponent of a power law ``y = c * x**p``; the standard
    error is the usual asymptotic one from the regression residuals.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, y) pairs")
    if len(pts) < 2:
        raise ValueError(f"need at least 2 points, got {len(pts)}")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("log-log fit needs finite, strictly positive coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("all x coordinates are equal")
    res = stats.linregress(lx, ly)
    stderr = float(res.stderr) if len(pts) > 2 and math.isfinite(res.stderr) else 0.0
    return FitResult(float(res.slope), float(res.intercept), stderr)
