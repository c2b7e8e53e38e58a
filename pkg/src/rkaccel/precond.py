"""Diagonal preconditioners built from iteration history.

APK fits ``C = diag(s)`` so that one preconditioned projection from
``x_{k-1}`` lands close to ``x_{k+m}``, the iterate reached after a full
cyclic sweep later on the same row.  The fit is a diagonal ridge regression
towards ``s = e`` and has a closed form per coordinate.

The AdaGrad helpers give the alternative diagonal ``C = lambda0 + (zeta I +
diag(sqrt(acc)))^{-1}`` from accumulated squared gradients.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dense import DenseMatrix, as_vector
from .errors import DimensionError

CLAMP_EPS = 1e-6
DEFAULT_ALPHA_REG = 1.0
DEFAULT_SUBSET = 2000


@dataclass
class HistoryBuffer:
    """Pairs ``(x_{k-1}, x_{k+m})`` for ``k = 2..m`` from two cyclic sweeps.

    Indices are 0-based: ``order`` is a permutation of ``range(m)``, pair
    ``t`` corresponds to ``k = t + 2`` and uses row ``rows[t] = order[k-1]``.
    ``x_last`` is the iterate after the second sweep, so a solver can carry
    on from where the collection stopped.
    """

    order: np.ndarray
    ks: np.ndarray
    rows: np.ndarray
    x_prev: np.ndarray
    x_far: np.ndarray
    x_last: np.ndarray
    subset_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ks.shape[0]

    def selected(self) -> np.ndarray:
        if self.subset_mask is None:
            return np.arange(len(self))
        return np.flatnonzero(self.subset_mask)

    def with_subset(self, size: int, rng: np.random.Generator) -> HistoryBuffer:
        """Copy with a uniformly drawn mask of ``size`` pairs (all pairs if fewer)."""
        mask = np.zeros(len(self), dtype=bool)
        if size >= len(self):
            mask[:] = True
        else:
            mask[rng.choice(len(self), size=size, replace=False)] = True
        return HistoryBuffer(self.order, self.ks, self.rows, self.x_prev, self.x_far, self.x_last, mask)


@dataclass
class DiagonalFit:
    s: np.ndarray
    alpha_reg: float
    objective_value: float

    def to_record(self) -> dict:
        return {
            "s": [float(v) for v in self.s],
            "objective_value": float(self.objective_value),
            "alpha_reg": float(self.alpha_reg),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def collect_history(A: DenseMatrix, b: np.ndarray, x0, order) -> HistoryBuffer:
    """Run ``2m`` cyclic Kaczmarz projections following ``order`` twice."""
    m, n = A.shape
    order = np.asarray(order, dtype=np.int64).reshape(-1)
    if order.shape[0] != m or not np.array_equal(np.sort(order), np.arange(m)):
        raise ValueError("order must be a permutation of the row indices")
    if b.shape[0] != m:
        raise DimensionError(f"b has length {b.shape[0]}, expected {m}")
    x = as_vector(x0, n, "x0")
    iterates = np.empty((2 * m + 1, n))
    iterates[0] = x
    _kernels.rk_run_record(A.data, b, A.row_norms_sq, x, np.concatenate([order, order]), iterates[1:])
    ks = np.arange(2, m + 1)
    return HistoryBuffer(
        order=order,
        ks=ks,
        rows=order[ks - 1],
        x_prev=iterates[ks - 1],
        x_far=iterates[ks + m],
        x_last=iterates[2 * m].copy(),
    )


def _design(h: HistoryBuffer, A: DenseMatrix, b: np.ndarray):
    """Diagonals of ``A'_{i_k}`` and the displacements ``delta_{i_k}`` for the selected pairs."""
    sel = h.selected()
    rows = h.rows[sel]
    xp = h.x_prev[sel]
    a = A.data[rows]
    coef = (b[rows] - np.einsum("ij,ij->i", a, xp)) / A.row_norms_sq[rows]
    return coef[:, None] * a, h.x_far[sel] - xp


def fit_diagonal(
    h: HistoryBuffer, A: DenseMatrix, b: np.ndarray, alpha_reg: float = DEFAULT_ALPHA_REG, clamp: float = CLAMP_EPS
) -> DiagonalFit:
    """Minimise the regularised surrogate objective in closed form.

    Stationarity of ``F`` gives, coordinate by coordinate,
    ``(sum_k A'^2 + alpha) s = sum_k A' delta + alpha``.  The result is
    clamped to ``[clamp, 1/clamp]`` so ``C`` stays positive definite.
    """
    if not alpha_reg > 0:
        raise ValueError("alpha_reg must be positive")
    ap, delta = _design(h, A, b)
    lhs = np.sum(ap * ap, axis=0) + alpha_reg
    rhs = np.sum(ap * delta, axis=0) + alpha_reg
    s = np.clip(rhs / lhs, clamp, 1.0 / clamp)
    return DiagonalFit(s, float(alpha_reg), objective_F(s, h, A, b, alpha_reg))


def objective_F(s, h: HistoryBuffer, A: DenseMatrix, b: np.ndarray, alpha_reg: float) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] != A.n:
        raise DimensionError(f"s has length {s.shape[0]}, expected {A.n}")
    ap, delta = _design(h, A, b)
    fit = float(np.sum((delta - ap * s) ** 2))
    return fit + alpha_reg * float(np.sum((s - 1.0) ** 2))


def adagrad_accumulate(acc, g) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if acc.shape != g.shape:
        raise DimensionError(f"accumulator shape {acc.shape} != gradient shape {g.shape}")
    return acc + g * g


def adagrad_matrix(acc, zeta: float) -> np.ndarray:
    """Diagonal of ``H_t = zeta I + diag(sqrt(acc))``."""
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    return zeta + np.sqrt(np.asarray(acc, dtype=np.float64))


def adagrad_precond(H, lambda0: float) -> np.ndarray:
    """Diagonal of ``C = lambda0 I + H^{-1}``."""
    if lambda0 < 0:
        raise ValueError("lambda0 must be non-negative")
    return lambda0 + 1.0 / np.asarray(H, dtype=np.float64)
