"""Dense system storage, weighted row sampling and residuals.

Every solver touches one row per iteration, so matrices are kept row-major
(C-contiguous float64) with the squared row norms cached at construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from . import _kernels
from .errors import DimensionError, NonFiniteError, ZeroRhsError, ZeroRowError


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Immutable row-major matrix with cached row statistics.

    Build through :func:`build_matrix`; the arrays are marked read-only so a
    single instance can be shared across worker threads.
    """

    data: np.ndarray
    row_norms_sq: np.ndarray
    frob_sq: float

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def row(self, j: int) -> np.ndarray:
        return self.data[j]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.data @ x

    def scaled(self, c: float) -> DenseMatrix:
        return build_matrix(self.data * c)


def build_matrix(raw) -> DenseMatrix:
    """Validate a 2-D grid of reals and cache its squared row norms.

    Raises:
      NonFiniteError: some entry is NaN or infinite.
      ZeroRowError: some row is identically zero (its sampling probability
        would be 0 and its projection undefined).
    """
    arr = np.array(raw, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("matrix contains NaN or infinite entries")
    norms = _kernels.row_norms_sq(arr)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroRowError(f"row {int(zero[0])} has zero norm")
    arr.setflags(write=False)
    norms.setflags(write=False)
    return DenseMatrix(arr, norms, float(np.sum(norms)))


def as_vector(values, length: int | None = None, name: str = "vector") -> np.ndarray:
    """Return ``values`` as a finite 1-D float64 array (a fresh copy)."""
    v = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if length is not None and v.shape[0] != length:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")
    return v


class RowSampler:
    """Draws row ``j`` with probability ``||a_j||^2 / ||A||_F^2``.

    Randomness comes from a Philox (counter-based) bit generator seeded
    explicitly, so a sampler is reproducible from its seed alone.  Each draw is
    one uniform double followed by a binary search over the cumulative
    weights.  ``sample_many(k)`` yields exactly the same sequence as ``k``
    calls to ``sample()``.
    """

    def __init__(self, weights: np.ndarray, seed: int):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("sampling weights must be a non-empty vector of positive reals")
        self.probs = w / w.sum()
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        self.cum_weights = cum
        self.seed = int(seed)
        self.rng = np.random.Generator(np.random.Philox(self.seed))

    @property
    def m(self) -> int:
        return self.cum_weights.shape[0]

    def sample(self) -> int:
        return int(self.sample_many(1)[0])

    def sample_many(self, k: int) -> np.ndarray:
        u = self.rng.random(k)
        idx = np.searchsorted(self.cum_weights, u, side="right")
        return np.minimum(idx, self.m - 1).astype(np.int64)


class ForcedSampler:
    """Replays a fixed row sequence.  Test hook for forcing step rules."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        self.pos = 0

    def sample(self) -> int:
        return int(self.sample_many(1)[0])

    def sample_many(self, k: int) -> np.ndarray:
        if self.pos + k > self.rows.size:
            raise IndexError("forced row sequence exhausted")
        out = self.rows[self.pos : self.pos + k]
        self.pos += k
        return out


def build_row_sampler(A: DenseMatrix, seed: int) -> RowSampler:
    return RowSampler(A.row_norms_sq, seed)


def sample_row(sampler) -> int:
    return sampler.sample()


def relative_residual(A: DenseMatrix, x: np.ndarray, b: np.ndarray) -> float:
    """``||b - Ax|| / ||b||``.

    Raises:
      ZeroRhsError: if ``b`` is the zero vector.
    """
    if x.shape[0] != A.n or b.shape[0] != A.m:
        raise DimensionError(f"x has length {x.shape[0]}, b has length {b.shape[0]} for A {A.shape}")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        raise ZeroRhsError("right-hand side is the zero vector")
    return float(np.linalg.norm(b - A.data @ x) / nb)


# Matrix Market I/O.  Dense data is written in array format with 17
# significant digits, which round-trips every finite double exactly.


def write_matrix_market(path, A) -> None:
    data = A.data if isinstance(A, DenseMatrix) else np.asarray(A, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    scipy.io.mmwrite(str(path), data, precision=17)


def read_matrix_market(path) -> np.ndarray:
    """Read an array- or coordinate-format file into a dense float64 array."""
    obj = scipy.io.mmread(str(path))
    if scipy.sparse.issparse(obj):
        obj = obj.toarray()
    return np.asarray(obj, dtype=np.float64)


def write_vector(path, v: np.ndarray) -> None:
    Path(path).write_text("".join(f"{val:.17g}\n" for val in np.asarray(v, dtype=np.float64)))


def read_vector(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=1)
