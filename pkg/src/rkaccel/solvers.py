"""Step rules for the Kaczmarz family behind one iterate/step interface.

Every state object exposes ``advance(A, b, rows)``, which applies its step
rule once per row index in ``rows`` (mutating the state in place).  The
``*_step`` functions draw one row from an injected sampler and call
``advance`` with it, so tests can force row sequences with
:class:`rkaccel.dense.ForcedSampler`.

Component convention for the gradient-based rules: ``f_i(x) = 1/2 (a_i^T x -
b_i)^2``, hence ``f_i'(x) = (a_i^T x - b_i) a_i`` and the Lipschitz constant
of the component gradients is ``max_i ||a_i||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dense import DenseMatrix, as_vector
from .errors import (
    DegeneratePrecondError,
    InvalidLambdaError,
    ScheduleExhaustedError,
    ZeroRowError,
)

ADAGRAD_ZETA = 1e-8
ADAGRAD_LAMBDA0 = 0.2

STEP_RULES = ("one_over_L", "one_over_2mL", "one_over_16L", "two_over_L_plus_m_mu")


def _rows(rows) -> np.ndarray:
    return np.ascontiguousarray(rows, dtype=np.int64).reshape(-1)


def project_row(x: np.ndarray, a: np.ndarray, b_val: float) -> np.ndarray:
    """Orthogonal projection of ``x`` onto ``{z : a^T z = b_val}``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    nrm = _kernels.dot(a, a)
    if nrm == 0.0:
        raise ZeroRowError("cannot project onto the hyperplane of a zero row")
    out = np.array(x, dtype=np.float64, copy=True)
    _kernels.rk_run(a.reshape(1, -1), np.array([b_val], dtype=np.float64), np.array([nrm]), out, np.zeros(1, np.int64))
    return out


@dataclass
class RkState:
    x: np.ndarray
    k: int = 0

    @classmethod
    def start(cls, x0) -> RkState:
        return cls(as_vector(x0, name="x0"))

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        _kernels.rk_run(A.data, b, A.row_norms_sq, self.x, rows)
        self.k += rows.size


def rk_step(state: RkState, A: DenseMatrix, b: np.ndarray, sampler) -> RkState:
    state.advance(A, b, [sampler.sample()])
    return state


@dataclass
class PrecondState:
    """Iterate plus the diagonal ``s`` of the preconditioner ``C = diag(s)``."""

    x: np.ndarray
    s: np.ndarray
    k: int = 0

    @classmethod
    def start(cls, x0, s=None) -> PrecondState:
        x = as_vector(x0, name="x0")
        s = np.ones_like(x) if s is None else as_vector(s, x.shape[0], "s")
        state = cls(x, np.empty(0))
        state.set_diagonal(s)
        return state

    def set_diagonal(self, s) -> None:
        s = as_vector(s, self.x.shape[0], "s")
        if np.any(s <= 0):
            raise DegeneratePrecondError("preconditioner diagonal must be strictly positive")
        self.s = s

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        bad = _kernels.apk_run(A.data, b, self.s, self.x, rows)
        if bad >= 0:
            self.k += int(bad)
            raise DegeneratePrecondError(f"a^T C a <= 0 for row {int(rows[bad])}")
        self.k += rows.size


def apk_step(state: PrecondState, A: DenseMatrix, b: np.ndarray, sampler) -> PrecondState:
    state.advance(A, b, [sampler.sample()])
    return state


def lipschitz_constant(A: DenseMatrix) -> float:
    return float(np.max(A.row_norms_sq))


def sag_step_size(rule: str, A: DenseMatrix, mu: float | None = None) -> float:
    """Constant step size for SAG and SAG-RK.

    ``mu`` is the strong-convexity constant of the averaged objective,
    ``lambda_min(A^T A) / m``; it is only needed for ``two_over_L_plus_m_mu``.
    """
    L = lipschitz_constant(A)
    if rule == "one_over_L":
        return 1.0 / L
    if rule == "one_over_2mL":
        return 1.0 / (2 * A.m * L)
    if rule == "one_over_16L":
        return 1.0 / (16 * L)
    if rule == "two_over_L_plus_m_mu":
        if mu is None:
            raise ValueError("two_over_L_plus_m_mu needs mu")
        return 2.0 / (L + A.m * mu)
    raise ValueError(f"unknown step rule {rule!r}; expected one of {STEP_RULES}")


@dataclass
class GradientTable:
    """Stored component gradients ``phi_i = coef[i] * a_i`` and their mean ``d``."""

    coef: np.ndarray
    d: np.ndarray
    visited: np.ndarray

    @classmethod
    def empty(cls, m: int, n: int) -> GradientTable:
        return cls(np.zeros(m), np.zeros(n), np.zeros(m, dtype=np.bool_))

    def recompute(self, A: DenseMatrix) -> np.ndarray:
        return _kernels.recompute_average(A.data, self.coef)

    def resync(self, A: DenseMatrix) -> None:
        self.d = self.recompute(A)


@dataclass
class SagState:
    x: np.ndarray
    table: GradientTable
    step: float
    k: int = 0

    @classmethod
    def start(cls, x0, A: DenseMatrix, step: float) -> SagState:
        if not step > 0:
            raise ValueError("step must be positive")
        return cls(as_vector(x0, A.n, "x0"), GradientTable.empty(A.m, A.n), float(step))

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        t = self.table
        _kernels.sag_run(A.data, b, self.x, t.coef, t.d, t.visited, self.step, rows)
        self.k += rows.size


def sag_step(state: SagState, A: DenseMatrix, b: np.ndarray, sampler) -> SagState:
    state.advance(A, b, [sampler.sample()])
    return state


@dataclass
class SagRkState:
    """SAG descent followed by a Kaczmarz projection.

    In ``exact`` mode the projection residual is taken at the post-descent
    point ``y_k`` and the table stores ``f_j'(y_k)``.  In ``relaxed`` mode the
    residual is the one at ``x_k`` and the table stores ``f_j'(x_k)``.  Either
    way the stored gradient reuses the residual already computed for the
    projection.
    """

    x: np.ndarray
    table: GradientTable
    step: float
    mode: str = "exact"
    k: int = 0

    @classmethod
    def start(cls, x0, A: DenseMatrix, step: float, mode: str = "exact") -> SagRkState:
        if mode not in ("exact", "relaxed"):
            raise ValueError(f"mode must be 'exact' or 'relaxed', got {mode!r}")
        if not step > 0:
            raise ValueError("step must be positive")
        return cls(as_vector(x0, A.n, "x0"), GradientTable.empty(A.m, A.n), float(step), mode)

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        t = self.table
        _kernels.sag_rk_run(
            A.data, b, A.row_norms_sq, self.x, t.coef, t.d, t.visited, self.step, self.mode == "relaxed", rows
        )
        self.k += rows.size


def sag_rk_step(state: SagRkState, A: DenseMatrix, b: np.ndarray, sampler) -> SagRkState:
    if state.mode != "exact":
        raise ValueError("sag_rk_step needs an exact-mode state; use sag_rk_relaxed_step")
    state.advance(A, b, [sampler.sample()])
    return state


def sag_rk_relaxed_step(state: SagRkState, A: DenseMatrix, b: np.ndarray, sampler) -> SagRkState:
    if state.mode != "relaxed":
        raise ValueError("sag_rk_relaxed_step needs a relaxed-mode state")
    state.advance(A, b, [sampler.sample()])
    return state


@dataclass
class ArkSchedule:
    alphas: np.ndarray
    betas: np.ndarray
    gammas: np.ndarray

    def __len__(self) -> int:
        return self.alphas.shape[0]


def _next_gamma(gamma_prev: float, lam: float, m: int) -> float:
    # larger root of  g^2 - g/m = (1 - g*lam/m) * gamma_prev^2
    p = (lam * gamma_prev * gamma_prev - 1.0) / m
    q = gamma_prev * gamma_prev
    disc = math.sqrt(p * p + 4.0 * q)
    if p > 0:
        return 2.0 * q / (p + disc)
    return 0.5 * (disc - p)


def ark_schedule(lam: float, frob_sq: float, horizon: int, n_rows: int, gamma_prev: float = 0.0) -> ArkSchedule:
    """Offline coefficients of the accelerated randomized Kaczmarz recurrence.

    This is Nesterov's accelerated coordinate-descent schedule applied to the
    row-normalised system, where ``lambda`` enters only through
    ``lam * m / ||A||_F^2`` (the strong-convexity constant of the system
    rescaled to ``||A||_F^2 = m``)::

        gamma_k^2 - gamma_k / m = (1 - gamma_k lam' / m) gamma_{k-1}^2,  gamma_{-1} = 0
        alpha_k = (m - gamma_k lam') / (gamma_k (m^2 - lam'))
        beta_k  = 1 - gamma_k lam' / m

    ``gamma_prev`` continues an existing schedule from its last ``gamma``.
    """
    if lam < 0 or not math.isfinite(lam):
        raise InvalidLambdaError(f"lambda must be finite and >= 0, got {lam}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    m = int(n_rows)
    lam_n = lam * m / frob_sq
    if lam_n >= m:
        raise InvalidLambdaError(f"lambda={lam} exceeds ||A||_F^2 = {frob_sq}")
    alphas = np.empty(horizon)
    betas = np.empty(horizon)
    gammas = np.empty(horizon)
    g = float(gamma_prev)
    for k in range(horizon):
        g = _next_gamma(g, lam_n, m)
        gammas[k] = g
        alphas[k] = (m - g * lam_n) / (g * (m * m - lam_n))
        betas[k] = 1.0 - g * lam_n / m
    return ArkSchedule(alphas, betas, gammas)


@dataclass
class ArkState:
    """Iterates ``x_k`` and ``v_k`` plus a window of the coefficient schedule.

    ``schedule[t]`` holds the coefficients for iteration ``offset + t``.
    """

    x: np.ndarray
    v: np.ndarray
    lam: float
    frob_sq: float
    n_rows: int
    schedule: ArkSchedule
    offset: int = 0
    k: int = 0

    @classmethod
    def start(cls, x0, A: DenseMatrix, lam: float, horizon: int = 1) -> ArkState:
        x = as_vector(x0, A.n, "x0")
        sched = ark_schedule(lam, A.frob_sq, horizon, A.m)
        return cls(x, x.copy(), float(lam), A.frob_sq, A.m, sched)

    def covers(self, count: int) -> bool:
        return self.k + count <= self.offset + len(self.schedule)

    def extend(self, count: int) -> None:
        """Ensure coefficients for the next ``count`` iterations, dropping consumed ones."""
        if self.covers(count):
            return
        end = self.offset + len(self.schedule)
        extra = ark_schedule(self.lam, self.frob_sq, self.k + count - end, self.n_rows, self.schedule.gammas[-1])
        lo = self.k - self.offset
        self.schedule = ArkSchedule(
            np.concatenate([self.schedule.alphas[lo:], extra.alphas]),
            np.concatenate([self.schedule.betas[lo:], extra.betas]),
            np.concatenate([self.schedule.gammas[lo:], extra.gammas]),
        )
        self.offset = self.k

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        if not self.covers(rows.size):
            raise ScheduleExhaustedError(
                f"schedule covers iterations < {self.offset + len(self.schedule)}, need {self.k + rows.size}"
            )
        lo = self.k - self.offset
        hi = lo + rows.size
        s = self.schedule
        _kernels.ark_run(
            A.data, b, A.row_norms_sq, self.x, self.v, s.alphas[lo:hi], s.betas[lo:hi], s.gammas[lo:hi], rows
        )
        self.k += rows.size


def ark_step(state: ArkState, A: DenseMatrix, b: np.ndarray, sampler) -> ArkState:
    state.advance(A, b, [sampler.sample()])
    return state


@dataclass
class AdaGradState:
    """Iterate plus the per-coordinate sum of squared stochastic gradients."""

    x: np.ndarray
    acc: np.ndarray
    zeta: float = ADAGRAD_ZETA
    lambda0: float = ADAGRAD_LAMBDA0
    k: int = 0

    @classmethod
    def start(cls, x0, zeta: float = ADAGRAD_ZETA, lambda0: float = ADAGRAD_LAMBDA0) -> AdaGradState:
        if not zeta > 0:
            raise ValueError("zeta must be positive")
        if lambda0 < 0:
            raise ValueError("lambda0 must be non-negative")
        x = as_vector(x0, name="x0")
        return cls(x, np.zeros_like(x), float(zeta), float(lambda0))

    def advance(self, A: DenseMatrix, b: np.ndarray, rows) -> None:
        rows = _rows(rows)
        _kernels.adagrad_rk_run(A.data, b, self.x, self.acc, self.zeta, self.lambda0, rows)
        self.k += rows.size


def adagrad_rk_step(
    state: AdaGradState, A: DenseMatrix, b: np.ndarray, sampler, zeta: float | None = None, lambda0: float | None = None
) -> AdaGradState:
    """One AdaGrad-preconditioned projection.

    The gradient at the current iterate is accumulated first; the diagonal
    ``C = lambda0 + 1 / (zeta + sqrt(acc))`` built from the updated
    accumulator then drives the preconditioned projection.
    """
    if zeta is not None:
        state.zeta = float(zeta)
    if lambda0 is not None:
        state.lambda0 = float(lambda0)
    state.advance(A, b, [sampler.sample()])
    return state
