"""Experiment orchestration: stopping rule, APK refits, ARK burn-in, traces.

All runs start from ``x_0 = 0``, evaluate ``||b - Ax|| / ||b||`` every
``check_interval`` iterations (``10 m`` by default) and stop below ``tol``,
at ``max_iters`` or when the residual exceeds ``1e10``.  Timing covers the
iteration loop only (plus the ARK burn-in), measured with a monotonic clock.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, precond, solvers
from .dense import DenseMatrix, build_row_sampler, relative_residual
from .errors import InstanceLoadError, NoProgressWarning
from .probgen import ProblemInstance, lambda_min, load_instance, make_instance

log = logging.getLogger(__name__)

ALGORITHMS = ("rk", "apk", "sag", "sag_rk", "sag_rk_relaxed", "ark", "adagrad_rk")
DIVERGENCE_THRESHOLD = 1e10
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITERS = 10_000_000
SAG_RESYNC_INTERVAL = 100_000
TRACE_HEADER = ("iteration", "rel_residual", "elapsed_s")
SUMMARY_HEADER = ("algorithm", "iterations", "wall_s", "terminal")


@dataclass
class ApkOptions:
    alpha_reg: float = precond.DEFAULT_ALPHA_REG
    refit_interval: int | None = None  # None -> 10 m
    warmup_sweeps: int = 2
    subset_size: int = precond.DEFAULT_SUBSET


@dataclass
class ArkOptions:
    lam: float | None = None  # None -> estimate by RK burn-in
    k2_multiplier: int = 15
    normalize: bool = False


@dataclass
class AdaGradOptions:
    zeta: float = solvers.ADAGRAD_ZETA
    lambda0: float = solvers.ADAGRAD_LAMBDA0


@dataclass
class ExperimentConfig:
    """One solver run.

    ``instance`` is either a path to an instance directory or a generator spec
    such as ``{"family": "gaussian", "m": 500, "n": 400, "seed": 0}``.
    ``step_rule`` is one of :data:`rkaccel.solvers.STEP_RULES` or an explicit
    positive float.
    """

    instance: str | dict
    algorithm: str = "rk"
    seed: int = 0
    step_rule: str | float = "one_over_L"
    tol: float = DEFAULT_TOL
    check_interval: int | None = None  # None -> 10 m
    max_iters: int = DEFAULT_MAX_ITERS
    mu: float | None = None
    apk: ApkOptions = field(default_factory=ApkOptions)
    ark: ArkOptions = field(default_factory=ArkOptions)
    adagrad: AdaGradOptions = field(default_factory=AdaGradOptions)
    label: str | None = None

    def validate(self, m: int | None = None) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        ci = self.check_interval if self.check_interval is not None else (10 * m if m else None)
        if ci is not None:
            if ci < 1:
                raise ValueError("check_interval must be >= 1")
            if self.max_iters < ci:
                raise ValueError("max_iters must be >= check_interval")
        if isinstance(self.step_rule, str):
            if self.step_rule not in solvers.STEP_RULES:
                raise ValueError(f"unknown step rule {self.step_rule!r}")
        elif not float(self.step_rule) > 0:
            raise ValueError("explicit step size must be positive")
        if self.apk.warmup_sweeps < 2:
            raise ValueError("apk warmup needs at least the 2 sweeps of a history collection")

    @property
    def name(self) -> str:
        return self.label or self.algorithm

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        apk = ApkOptions(**d.pop("apk", {}) or {})
        ark = ArkOptions(**d.pop("ark", {}) or {})
        ada = AdaGradOptions(**d.pop("adagrad", {}) or {})
        return cls(**d, apk=apk, ark=ark, adagrad=ada)


@dataclass
class Trace:
    samples: list = field(default_factory=list)  # (iteration, rel_residual, elapsed_s)
    terminal: str = "max_iters"
    total_iterations: int = 0
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    refit_events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def algorithm(self) -> str:
        return self.config.get("label") or self.config.get("algorithm", "?")

    @property
    def final_residual(self) -> float:
        return self.samples[-1][1] if self.samples else math.nan

    def residuals(self) -> list:
        return [r for _, r, _ in self.samples]

    def summary_row(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "iterations": self.total_iterations,
            "wall_s": self.wall_seconds,
            "terminal": self.terminal,
        }


def resolve_instance(ref) -> ProblemInstance:
    if isinstance(ref, ProblemInstance):
        return ref
    if isinstance(ref, dict):
        spec = dict(ref)
        try:
            return make_instance(
                spec["family"], int(spec["m"]), int(spec.get("n", spec["m"])), int(spec.get("seed", 0)), spec.get("alpha")
            )
        except KeyError as exc:
            raise InstanceLoadError(f"generator spec missing {exc}") from exc
    return load_instance(ref)


def lambda_from_residuals(frob_sq: float, res_k1: float, res_k2: float, k1: int, k2: int) -> float:
    """Burn-in estimate ``||A||_F^2 [1 - (res_k2 / res_k1)^{0.5 / (k2 - k1)}]``, clamped to >= 0."""
    if not k2 > k1:
        raise ValueError("need K2 > K1")
    if res_k1 == 0.0:
        return 0.0
    ratio = res_k2 / res_k1
    if not ratio < 1.0:
        return 0.0
    return max(0.0, frob_sq * (1.0 - ratio ** (0.5 / (k2 - k1))))


def estimate_lambda_min(
    A: DenseMatrix, b: np.ndarray, K2: int | None = None, seed: int = 0, normalize: bool = False
) -> float:
    """Estimate ``lambda_min(A^T A)`` from the decay of plain RK residuals.

    Runs RK from zero, recording ``x`` after ``K1 + 1`` and ``K2 + 1`` steps with
    ``K1 = max(1, K2 - 10 m)``.  ``K2`` defaults to ``15 m``.  With
    ``normalize`` the system is first rescaled so that ``||A||_F^2 = m`` and the
    estimate refers to the rescaled matrix.
    """
    m = A.m
    K2 = 15 * m if K2 is None else int(K2)
    K1 = max(1, K2 - 10 * m)
    if not K2 > K1 >= 1:
        raise ValueError(f"need K2 > K1 >= 1, got K1={K1}, K2={K2}")
    if normalize:
        c = math.sqrt(m / A.frob_sq)
        A, b = A.scaled(c), b * c
    sampler = build_row_sampler(A, seed)
    state = solvers.RkState(np.zeros(A.n))
    state.advance(A, b, sampler.sample_many(K1 + 1))
    r1 = float(np.linalg.norm(A.data @ state.x - b))
    state.advance(A, b, sampler.sample_many(K2 - K1))
    r2 = float(np.linalg.norm(A.data @ state.x - b))
    if r1 > 0 and not r2 < r1:
        warnings.warn(f"no residual decrease over the burn-in ({r1:.3e} -> {r2:.3e}); lambda_min clamped to 0",
                      NoProgressWarning, stacklevel=2)
    return lambda_from_residuals(A.frob_sq, r1, r2, K1, K2)


def _step_size(config: ExperimentConfig, A: DenseMatrix) -> float:
    if not isinstance(config.step_rule, str):
        return float(config.step_rule)
    mu = config.mu
    if config.step_rule == "two_over_L_plus_m_mu" and mu is None:
        mu = lambda_min(A) / A.m
    return solvers.sag_step_size(config.step_rule, A, mu)


def _advance_sag(state, A, b, rows) -> None:
    # resync the running average every SAG_RESYNC_INTERVAL updates
    pos = 0
    while pos < rows.size:
        to_boundary = SAG_RESYNC_INTERVAL - state.k % SAG_RESYNC_INTERVAL
        take = min(to_boundary, rows.size - pos)
        state.advance(A, b, rows[pos : pos + take])
        pos += take
        if state.k % SAG_RESYNC_INTERVAL == 0:
            state.table.resync(A)


class _ApkDriver:
    """Alternates cyclic history collection + refit with preconditioned random steps."""

    def __init__(self, A, b, x0, opts: ApkOptions, seed: int):
        self.A, self.b, self.opts = A, b, opts
        self.refit_interval = opts.refit_interval or 10 * A.m
        self.perm_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2])))
        self.state = solvers.PrecondState.start(x0)
        self.next_refit = 0
        self.events: list = []
        self.fits: list = []

    @property
    def x(self):
        return self.state.x

    def refit(self) -> int:
        """Collect history from the current iterate and refit ``s``; returns iterations used."""
        A, m = self.A, self.A.m
        used = 0
        if not self.events:
            for _ in range(self.opts.warmup_sweeps - 2):
                _kernels.rk_run(A.data, self.b, A.row_norms_sq, self.state.x, self.perm_rng.permutation(m))
                used += m
        h = precond.collect_history(A, self.b, self.state.x, self.perm_rng.permutation(m))
        used += 2 * m
        if len(h) > self.opts.subset_size:
            h = h.with_subset(self.opts.subset_size, self.perm_rng)
        fit = precond.fit_diagonal(h, A, self.b, self.opts.alpha_reg)
        self.state.x = h.x_last
        self.state.set_diagonal(fit.s)
        self.fits.append(fit)
        return used

    def advance(self, it: int, budget: int, sampler) -> int:
        """Run up to ``budget`` iterations starting at global iteration ``it``."""
        done = 0
        while done < budget:
            if it + done >= self.next_refit:
                used = self.refit()
                self.events.append(it + done)
                self.next_refit = it + done + self.refit_interval
                done += used
                continue
            take = min(budget - done, self.next_refit - (it + done))
            self.state.advance(self.A, self.b, sampler.sample_many(take))
            done += take
        return done


def run(config: ExperimentConfig, instance: ProblemInstance | None = None, x0=None) -> Trace:
    """Run one configuration to convergence, divergence or ``max_iters``.

    ``x0`` overrides the zero starting point (test hook).
    """
    inst = instance if instance is not None else resolve_instance(config.instance)
    A, b = inst.A, inst.b
    m, n = A.shape
    config.validate(m)
    check = config.check_interval or 10 * m
    x_start = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    relative_residual(A, x_start, b)  # rejects b = 0 before any work
    sampler = build_row_sampler(A, config.seed)
    trace = Trace(config=config.to_dict())
    alg = config.algorithm

    t0 = time.perf_counter()
    apk = None
    if alg == "rk":
        state = solvers.RkState(x_start.copy())
    elif alg == "apk":
        apk = _ApkDriver(A, b, x_start.copy(), config.apk, config.seed)
        state = apk.state
    elif alg == "sag":
        step = _step_size(config, A)
        state = solvers.SagState.start(x_start, A, step)
        trace.meta["step"] = step
    elif alg in ("sag_rk", "sag_rk_relaxed"):
        step = _step_size(config, A)
        state = solvers.SagRkState.start(x_start, A, step, "relaxed" if alg == "sag_rk_relaxed" else "exact")
        trace.meta["step"] = step
    elif alg == "ark":
        lam = config.ark.lam
        if lam is None:
            k2 = config.ark.k2_multiplier * m
            lam = estimate_lambda_min(A, b, k2, seed=config.seed + 1, normalize=config.ark.normalize)
            if config.ark.normalize:
                lam *= A.frob_sq / m
            trace.meta["burn_in_iterations"] = k2 + 1
        trace.meta["lambda"] = lam
        state = solvers.ArkState.start(x_start, A, lam, horizon=check)
    elif alg == "adagrad_rk":
        state = solvers.AdaGradState.start(x_start, config.adagrad.zeta, config.adagrad.lambda0)
    else:  # pragma: no cover - validate() rejects this
        raise ValueError(alg)
    if "burn_in_iterations" in trace.meta:
        trace.meta["burn_in_seconds"] = time.perf_counter() - t0

    it = 0
    terminal = "max_iters"
    while it < config.max_iters:
        budget = min(check - it % check, config.max_iters - it)
        if apk is not None:
            it += apk.advance(it, budget, sampler)
            x = apk.x
        else:
            rows = sampler.sample_many(budget)
            if alg == "ark":
                state.extend(budget)
            if alg in ("sag", "sag_rk", "sag_rk_relaxed"):
                _advance_sag(state, A, b, rows)
            else:
                state.advance(A, b, rows)
            it += budget
            x = state.x
        res = relative_residual(A, x, b)
        trace.samples.append((it, res, time.perf_counter() - t0))
        if res < config.tol:
            terminal = "converged"
            break
        if not math.isfinite(res) or res > DIVERGENCE_THRESHOLD:
            terminal = "diverged"
            break
    trace.wall_seconds = time.perf_counter() - t0
    trace.terminal = terminal
    trace.total_iterations = it
    if apk is not None:
        trace.refit_events = list(apk.events)
        trace.meta["refit_min_s"] = [float(np.min(f.s)) for f in apk.fits]
        trace.meta["fits"] = [f.to_record() for f in apk.fits]
    log.debug("%s: %s after %d iterations (%.3fs)", config.name, terminal, it, trace.wall_seconds)
    return trace


# Trace and summary I/O


def format_trace_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for k, r, t in trace.samples:
        w.writerow((int(k), f"{r:.17g}", f"{t:.17g}"))
    return buf.getvalue()


def emit_trace(trace: Trace, path) -> Path:
    """Write the trace CSV plus a JSON sidecar (``.json``) with run metadata."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(format_trace_csv(trace))
    meta = {
        "terminal": trace.terminal,
        "total_iterations": trace.total_iterations,
        "wall_seconds": trace.wall_seconds,
        "config": trace.config,
        "refit_events": trace.refit_events,
        "meta": trace.meta,
    }
    p.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return p


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_trace(path) -> Trace:
    p = Path(path)
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise ValueError(f"{p} is not a trace CSV")
    samples = [(int(k), float(r), float(t)) for k, r, t in rows[1:]]
    trace = Trace(samples=samples)
    side = p.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
        trace.terminal = meta["terminal"]
        trace.total_iterations = meta["total_iterations"]
        trace.wall_seconds = meta["wall_seconds"]
        trace.config = meta.get("config", {})
        trace.refit_events = meta.get("refit_events", [])
        trace.meta = meta.get("meta", {})
    elif samples:
        trace.total_iterations = samples[-1][0]
        trace.wall_seconds = samples[-1][2]
    return trace


def summarize(traces) -> list:
    """One summary row per trace, ordered by wall time."""
    return sorted((t.summary_row() for t in traces), key=lambda r: r["wall_s"])


def _run_one(args):
    config, instance = args
    return run(config, instance)


def compare(configs, instance: ProblemInstance | None = None, workers: int = 1) -> tuple[list, list]:
    """Run every config and return ``(traces, summary_rows)``.

    Traces come back in config order regardless of ``workers``; the summary is
    ordered by wall time.
    """
    configs = list(configs)
    jobs = [(c, instance) for c in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(j) for j in jobs]
    return traces, summarize(traces)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow((r["algorithm"], r["iterations"], f"{r['wall_s']:.6f}", r["terminal"]))
    return buf.getvalue()


def summary_text(rows) -> str:
    cells = [SUMMARY_HEADER] + [
        (r["algorithm"], str(r["iterations"]), f"{r['wall_s']:.3f}", r["terminal"]) for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(SUMMARY_HEADER))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"
