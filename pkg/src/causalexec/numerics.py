"""Dense-vector kernel: validation helpers, gradients, and first-order descent.

Vectors and matrices are contiguous float64 ndarrays.  The production
gradient is the reverse-mode tape in :mod:`causalexec.autodiff`;
:func:`finite_difference_gradient` is the independent verification oracle
and is never used on any production path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ag
from .autodiff import NonFiniteError

Vec = np.ndarray
Mat = np.ndarray


class DivergenceError(RuntimeError):
    """Descent on an objective flagged convex increased 10 steps in a row."""


def as_vec(x, name: str = "vector") -> Vec:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    ensure_finite(v, name)
    return v


def as_mat(x, name: str = "matrix") -> Mat:
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"{name} must have positive dimensions, got {m.shape}")
    ensure_finite(m, name)
    return m


def ensure_finite(x: np.ndarray, name: str = "value") -> np.ndarray:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        flat = x.ravel()
        bad = int(np.argmax(~np.isfinite(flat)))
        raise NonFiniteError(f"{name} is not finite at coordinate {bad}")
    return x


# ---------------------------------------------------------------------
# randomness: one counter-based generator, threaded explicitly
# ---------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """Deterministic 64-bit counter-based generator (Philox)."""
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators, deterministic given the parent state."""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [make_rng(int(s)) for s in seeds]


# ---------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------

def grad(f: Callable, x: Vec) -> Vec:
    """Gradient of scalar ``f`` at ``x`` via the reverse-mode tape."""
    return ag.grad(f, as_vec(np.asarray(x, dtype=np.float64).ravel(), "x"))


def finite_difference_gradient(f: Callable, x: Vec, step: float = 1e-5) -> Vec:
    """Central-difference gradient; the verification oracle, not a production path."""
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (float(ag.value_of(f(hi))) - float(ag.value_of(f(lo)))) / (2.0 * step)
    return g


def relative_gradient_error(g_a: np.ndarray, g_b: np.ndarray) -> float:
    """Scale-free disagreement between two gradients of the same function."""
    g_a = np.asarray(g_a, dtype=np.float64).ravel()
    g_b = np.asarray(g_b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(g_a)), float(np.linalg.norm(g_b)), 1e-8)
    return float(np.linalg.norm(g_a - g_b)) / denom


# ---------------------------------------------------------------------
# projection and descent
# ---------------------------------------------------------------------

def project_box(w: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Elementwise clamp of a vector or matrix into [lo, hi]; idempotent."""
    if lo > hi:
        raise ValueError(f"empty box: lo={lo} > hi={hi}")
    return np.clip(np.asarray(w, dtype=np.float64), lo, hi)


@dataclass(frozen=True)
class OptimizerConfig:
    """First-order descent settings.

    ``step_size`` of None selects backtracking line search.  When both
    curvature bounds are given they must satisfy mu <= lip, and a fixed
    step must satisfy step_size <= 1/lip.
    """

    step_size: Optional[float] = None
    max_iters: int = 100
    mu: Optional[float] = None
    lip: Optional[float] = None
    tol: float = 1e-12
    convex: bool = False

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.lip is not None and self.lip <= 0:
            raise ValueError("lip must be positive")
        if self.mu is not None and self.lip is not None and self.mu > self.lip:
            raise ValueError(f"mu={self.mu} exceeds lip={self.lip}")
        if self.step_size is not None and self.lip is not None:
            if self.step_size > 1.0 / self.lip + 1e-15:
                raise ValueError("step_size exceeds 1/lip")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class DescentResult:
    x: Vec
    trace: list[float]
    iterates: list[Vec] = field(default_factory=list)


def descend(
    objective: Callable,
    x0: Vec,
    cfg: OptimizerConfig,
    projection: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    keep_iterates: bool = False,
) -> DescentResult:
    """(Projected) gradient descent with a full objective trace.

    Fixed step when ``cfg.step_size`` is set, otherwise backtracking from
    1/lip (or 1.0).  The trace holds the objective at x0 and after every
    accepted iterate; with backtracking it is nonincreasing by
    construction.  With ``cfg.convex`` set, ten consecutive objective
    increases raise :class:`DivergenceError`.
    """
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    if projection is not None:
        x = projection(x)
    f0, g = ag.value_and_grad(objective, x)
    ensure_finite(np.asarray(f0), "objective at x0")
    trace = [f0]
    iterates = [x.copy()] if keep_iterates else []
    step0 = cfg.step_size if cfg.step_size is not None else (
        1.0 / cfg.lip if cfg.lip is not None else 1.0
    )
    rises = 0
    f_prev = f0
    for _ in range(cfg.max_iters):
        if cfg.step_size is not None:
            x_new = x - cfg.step_size * g
            if projection is not None:
                x_new = projection(x_new)
            f_new, g_new = ag.value_and_grad(objective, x_new)
        else:
            # halve until the objective does not increase
            step = step0
            f_new, g_new, x_new = f_prev, g, x
            for _try in range(40):
                cand = x - step * g
                if projection is not None:
                    cand = projection(cand)
                f_cand = float(ag.value_of(objective(cand)))
                if np.isfinite(f_cand) and f_cand <= f_prev:
                    x_new = cand
                    f_new, g_new = ag.value_and_grad(objective, cand)
                    break
                step *= 0.5
        trace.append(f_new)
        if keep_iterates:
            iterates.append(np.asarray(x_new, dtype=np.float64).copy())
        if f_new > f_prev:
            rises += 1
            if cfg.convex and rises >= 10:
                raise DivergenceError(
                    "objective increased 10 consecutive steps on a convex problem"
                )
        else:
            rises = 0
        moved = float(np.max(np.abs(np.asarray(x_new) - x))) if cfg.max_iters else 0.0
        x, g = np.asarray(x_new, dtype=np.float64), g_new
        improved = f_prev - f_new
        f_prev = f_new
        if 0.0 <= improved < cfg.tol and moved < cfg.tol:
            break
    ensure_finite(x, "descend iterate")
    return DescentResult(x=x, trace=trace, iterates=iterates)


def least_squares(a: Mat, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-norm least squares fit; returns (coefficients, r_squared)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    coef, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    pred = a @ coef
    resid = float(np.sum((b - pred) ** 2))
    total = float(np.sum((b - b.mean(axis=0)) ** 2)) if b.size else 0.0
    r2 = 1.0 - resid / total if total > 0 else 1.0
    return coef, r2
