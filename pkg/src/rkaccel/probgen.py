"""Synthetic test systems with controlled conditioning.

Two families:

* ``gaussian``: ``m x n`` matrix of i.i.d. standard normals.
* ``power_spectrum``: a square Gaussian matrix whose singular values are
  replaced by ``i^{-alpha}``, keeping its singular vectors.

Normals are produced by inverse-CDF transform of Philox uniforms, so every
generator is a pure function of its shape, parameters and seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .dense import (
    DenseMatrix,
    build_matrix,
    read_matrix_market,
    read_vector,
    write_matrix_market,
    write_vector,
)
from .errors import BadShapeError, InstanceLoadError, RankDeficientError, SvdFailureError

FORMAT_VERSION = 1
FAMILIES = ("gaussian", "power_spectrum")

_STREAM_MATRIX = 0
_STREAM_SOLUTION = 1


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normals by inverse CDF of uniforms on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / 2.0**53)


@dataclass
class ProblemInstance:
    A: DenseMatrix
    b: np.ndarray
    x_true: np.ndarray
    kappa_frob: float
    family: str
    seed: int
    spectrum_alpha: float | None = None

    def metadata(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "family": self.family,
            "m": self.A.m,
            "n": self.A.n,
            "seed": self.seed,
            "alpha": self.spectrum_alpha,
            "kappa_frob": self.kappa_frob,
        }


def gen_gaussian(m: int, n: int, seed: int) -> DenseMatrix:
    if not (m >= n >= 1):
        raise BadShapeError(f"need m >= n >= 1, got m={m}, n={n}")
    return build_matrix(standard_normal(_rng(seed, _STREAM_MATRIX), (m, n)))


def _svd(G: np.ndarray, compute_uv: bool = True):
    try:
        return np.linalg.svd(G, full_matrices=False, compute_uv=compute_uv)
    except np.linalg.LinAlgError as exc:
        raise SvdFailureError(str(exc)) from exc


def gen_power_spectrum(n: int, alpha: float, seed: int) -> DenseMatrix:
    """``U diag(i^{-alpha}) V^T`` with ``U, V`` from the SVD of a seeded Gaussian matrix."""
    if n < 1:
        raise BadShapeError(f"need n >= 1, got {n}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    G = standard_normal(_rng(seed, _STREAM_MATRIX), (n, n))
    U, _, Vt = _svd(G)
    sigma = np.arange(1, n + 1, dtype=np.float64) ** (-float(alpha))
    return build_matrix((U * sigma) @ Vt)


def gen_consistent(A: DenseMatrix, seed: int, x_true=None) -> tuple[np.ndarray, np.ndarray]:
    """Standard normal ``x_true`` and ``b = A x_true``.

    Passing ``x_true`` skips the draw (test hook).
    """
    if x_true is None:
        x_true = standard_normal(_rng(seed, _STREAM_SOLUTION), A.n)
    x_true = np.asarray(x_true, dtype=np.float64).copy()
    return x_true, A.data @ x_true


def kappa_frobenius(A) -> float:
    """``||A||_F / sigma_min(A)`` from a full SVD."""
    data = A.data if isinstance(A, DenseMatrix) else np.asarray(A, dtype=np.float64)
    m, n = data.shape
    sv = _svd(data, compute_uv=False)
    if m < n or sv[-1] <= 1e-12 * sv[0]:
        raise RankDeficientError("matrix does not have full column rank")
    return float(np.linalg.norm(data) / sv[-1])


def power_spectrum_kappa(n: int, alpha: float) -> float:
    """Closed form of ``kappa_frob`` for the power-spectrum family."""
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(n**alpha * np.sqrt(np.sum(i ** (-2.0 * alpha))))


def lambda_min(A: DenseMatrix) -> float:
    """Smallest eigenvalue of ``A^T A`` (squared smallest singular value)."""
    return float(_svd(A.data, compute_uv=False)[-1] ** 2)


def make_instance(family: str, m: int, n: int, seed: int, alpha: float | None = None) -> ProblemInstance:
    if family == "gaussian":
        A = gen_gaussian(m, n, seed)
        alpha = None
    elif family == "power_spectrum":
        if m != n:
            raise BadShapeError("power_spectrum instances are square")
        if alpha is None:
            raise ValueError("power_spectrum needs alpha")
        A = gen_power_spectrum(n, alpha, seed)
    else:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    x_true, b = gen_consistent(A, seed)
    return ProblemInstance(A, b, x_true, kappa_frobenius(A), family, int(seed), alpha)


def save_instance(inst: ProblemInstance, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_market(out / "A.mtx", inst.A)
    write_vector(out / "b.txt", inst.b)
    write_vector(out / "x_true.txt", inst.x_true)
    (out / "meta.json").write_text(json.dumps(inst.metadata(), indent=2) + "\n")
    return out


def load_instance(path) -> ProblemInstance:
    p = Path(path)
    try:
        meta = json.loads((p / "meta.json").read_text())
        A = build_matrix(read_matrix_market(p / "A.mtx"))
        b = read_vector(p / "b.txt")
        x_true = read_vector(p / "x_true.txt") if (p / "x_true.txt").exists() else np.full(A.n, np.nan)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise InstanceLoadError(f"cannot load instance from {p}: {exc}") from exc
    if b.shape[0] != A.m:
        raise InstanceLoadError(f"b has length {b.shape[0]} but A has {A.m} rows")
    return ProblemInstance(
        A, b, x_true, float(meta.get("kappa_frob", np.nan)), meta.get("family", "unknown"),
        int(meta.get("seed", -1)), meta.get("alpha"),
    )
