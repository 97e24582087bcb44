"""
Subproblem Solver
Per-coordinate strongly convex objective shared by the sharpness test and the DL-BCD row update:

    f(w) = sum_{i active} |<beta_i, w>| + sum_{h != k} sqrt((w_h - m_h)^2 + 1 - m_h^2) * c_h

minimized over w with w[k] = 1 by a BFGS iteration with backtracking line search.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import lsq_linear

from .errors import ContractError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

_ARMIJO_C1 = 1e-4
_MAX_HALVINGS = 60


@dataclass
class SolverConfig:
    """Stopping rules and safeguards for solve()."""
    tol: float = 1e-9
    max_iter: int = 500
    stall_iterations: int = 5
    max_failed_directions: int = 10
    clamp: float = 1e-9
    kink_tols: Tuple[float, ...] = (1e-12, 1e-9, 1e-6, 1e-4, 1e-2)
    certificate_kink_tol: float = 1e-6
    subgradient_step: float = 0.1

    def __post_init__(self):
        self.kink_tols = tuple(sorted(float(t) for t in self.kink_tols))
        if self.tol <= 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if not 0.0 < self.clamp < 1.0:
            raise ParameterError(f"clamp must lie in (0, 1), got {self.clamp}")
        if not self.kink_tols:
            raise ParameterError("kink_tols must not be empty")

    @classmethod
    def from_config(cls, config: Dict, **overrides) -> "SolverConfig":
        """Build from the 'solver' section of a config dict; non-None overrides win."""
        section = dict(config.get('solver', {}) or {})
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in section.items() if k in known})


@dataclass
class SubproblemData:
    """
    Data of one coordinate subproblem.

    Args:
        beta: n x K coefficient matrix (rows beta_i)
        k: fixed coordinate (0-based)
        m_row: collinearity row M[k, :] (entry k unused)
        weights: c_h = sum of |beta_h| over the samples kept for coordinate h
        active_first: samples included in the sum |<beta_i, w>|
    """
    beta: np.ndarray
    k: int
    m_row: np.ndarray
    weights: np.ndarray
    active_first: np.ndarray
    clamp: float = 1e-9
    _free: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        n, dim = self.beta.shape
        if not 0 <= self.k < dim:
            raise ParameterError(f"coordinate {self.k} out of range for K={dim}")
        self.m_row = np.asarray(self.m_row, dtype=float).copy()
        self.weights = np.asarray(self.weights, dtype=float)
        self.active_first = np.asarray(self.active_first, dtype=bool)
        if self.m_row.shape != (dim,) or self.weights.shape != (dim,):
            raise ShapeError(f"m_row and weights must have length K={dim}")
        if self.active_first.shape != (n,):
            raise ShapeError(f"active_first must have length n={n}")
        if np.any(self.weights < 0):
            raise ParameterError("weights must be non-negative")

        self._free = np.flatnonzero(np.arange(dim) != self.k)
        bound = 1.0 - self.clamp
        self.m_row[self._free] = np.clip(self.m_row[self._free], -bound, bound)

    @classmethod
    def build(cls, beta: np.ndarray, k: int, m_row: np.ndarray, tau: float = np.inf, clamp: float = 1e-9) -> "SubproblemData":
        """
        Derive weights and the first-term mask from beta with truncation threshold tau.

        A sample enters the first term when |beta_ik| < tau; c_h sums |beta_ih| over samples with
        |beta_ih| < tau. tau = inf keeps everything.
        """
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        magnitude = np.abs(beta)
        kept = magnitude < tau
        weights = np.where(kept, magnitude, 0.0).sum(axis=0)
        return cls(beta, k, m_row, weights, kept[:, k], clamp=clamp)

    @property
    def dim(self) -> int:
        return self.beta.shape[1]

    @property
    def free(self) -> np.ndarray:
        return self._free


@dataclass
class SolveResult:
    w: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    stop_reason: str = ""


class _ReducedProblem:
    """The objective restricted to the K-1 free coordinates x = w[free]."""

    def __init__(self, data: SubproblemData):
        self.k = data.k
        self.dim = data.dim
        self.free = data.free
        active = data.beta[data.active_first]
        self.b0 = active[:, data.k]
        self.bf = active[:, self.free]
        self.m = data.m_row[self.free]
        self.gap = (1.0 - self.m) * (1.0 + self.m)
        self.c = data.weights[self.free]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.b0 + self.bf @ x

    def value(self, x: np.ndarray, r: np.ndarray) -> float:
        roots = np.sqrt((x - self.m) ** 2 + self.gap)
        return float(np.abs(r).sum() + (self.c * roots).sum())

    def smooth_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.c * (x - self.m) / np.sqrt((x - self.m) ** 2 + self.gap)

    def gradient(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        return self.bf.T @ np.sign(r) + self.smooth_gradient(x)

    def min_norm_subgradient(self, x: np.ndarray, r: np.ndarray, kink_tol: float) -> Tuple[np.ndarray, int]:
        """
        Minimum-norm element of the subdifferential when samples with |r_i| <= kink_tol * scale
        are treated as kinks. Returns the element and the number of kinks.
        """
        scale = float(np.max(np.abs(r))) if r.size else 0.0
        if scale == 0.0:
            scale = 1.0
        kinks = np.abs(r) <= kink_tol * scale
        smooth = ~kinks
        base = self.smooth_gradient(x) + self.bf[smooth].T @ np.sign(r[smooth])
        n_kinks = int(kinks.sum())
        if n_kinks == 0:
            return base, 0
        basis = self.bf[kinks].T
        fit = lsq_linear(basis, -base, bounds=(-1.0, 1.0), method='trf', tol=1e-12, lsq_solver='exact')
        return base + basis @ fit.x, n_kinks

    def to_full(self, x: np.ndarray) -> np.ndarray:
        w = np.empty(self.dim)
        w[self.k] = 1.0
        w[self.free] = x
        return w


def _check_fixed(data: SubproblemData, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.dim,):
        raise ShapeError(f"w must have length K={data.dim}, got {w.shape}")
    if w[data.k] != 1.0:
        raise ContractError(f"w[{data.k}] must equal 1, got {w[data.k]!r}")
    return w


def objective(data: SubproblemData, w: np.ndarray) -> float:
    """Value of the subproblem objective at w (w[k] must be exactly 1)."""
    w = _check_fixed(data, w)
    problem = _ReducedProblem(data)
    x = w[problem.free]
    return problem.value(x, problem.residual(x))


def subgradient(data: SubproblemData, w: np.ndarray) -> np.ndarray:
    """Subgradient with sign(0) = 0 on the l1 term; component k is reported as 0."""
    w = _check_fixed(data, w)
    problem = _ReducedProblem(data)
    x = w[problem.free]
    g = np.zeros(data.dim)
    g[problem.free] = problem.gradient(x, problem.residual(x))
    return g


def _armijo(problem: _ReducedProblem, x: np.ndarray, f: float, d: np.ndarray, slope: float):
    """Backtracking on objective values only; returns (x, r, f) or None."""
    t = 1.0
    for _ in range(_MAX_HALVINGS):
        x_new = x + t * d
        r_new = problem.residual(x_new)
        f_new = problem.value(x_new, r_new)
        if f_new < f and f_new <= f + _ARMIJO_C1 * t * slope:
            return x_new, r_new, f_new
        t *= 0.5
    return None


def _certified(problem: _ReducedProblem, x: np.ndarray, r: np.ndarray, f: float, tol: float, cfg: SolverConfig) -> bool:
    """True when some subgradient at x has norm <= tol * max(1, f)."""
    bound = tol * max(1.0, f)
    last_kinks = -1
    for kink_tol in cfg.kink_tols:
        if kink_tol > cfg.certificate_kink_tol:
            break
        v, n_kinks = problem.min_norm_subgradient(x, r, kink_tol)
        if n_kinks == last_kinks:
            continue
        last_kinks = n_kinks
        if np.linalg.norm(v) <= bound:
            return True
    return False


def _ladder_step(problem: _ReducedProblem, x: np.ndarray, r: np.ndarray, f: float, cfg: SolverConfig):
    """Descend along the negative minimum-norm subgradient, loosening the kink tolerance."""
    last_kinks = -1
    for kink_tol in cfg.kink_tols:
        v, n_kinks = problem.min_norm_subgradient(x, r, kink_tol)
        if n_kinks == last_kinks:
            continue
        last_kinks = n_kinks
        sq = float(v @ v)
        if sq <= 0.0:
            continue
        step = _armijo(problem, x, f, -v, -sq)
        if step is not None:
            return step
    return None


def _bfgs_update(h: np.ndarray, s: np.ndarray, y: np.ndarray, fresh: bool) -> Tuple[np.ndarray, bool]:
    sy = float(s @ y)
    if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        return h, fresh
    if fresh:
        h = (sy / float(y @ y)) * np.eye(len(s))
    rho = 1.0 / sy
    v = np.eye(len(s)) - rho * np.outer(s, y)
    return v @ h @ v.T + rho * np.outer(s, s), False


def solve(
    data: SubproblemData,
    w0: Optional[np.ndarray] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    config: Optional[SolverConfig] = None
) -> SolveResult:
    """
    Minimize the subproblem objective over the free coordinates.

    Converged when some subgradient at the current point has norm <= tol * max(1, f) (which
    implies every directional derivative, in particular along +-e_h, is >= -tol * max(1, f)),
    or when the decrease stays below tol * (1 + |f|) for stall_iterations accepted iterations.
    After max_failed_directions consecutive failed quasi-Newton directions the method switches
    to diminishing-step subgradient descent. Hitting max_iter returns the best iterate with
    converged=False.

    Args:
        data: Subproblem data
        w0: Start point with w0[k] = 1 (default: the k-th canonical basis vector)
        tol: Stationarity tolerance (default from config)
        max_iter: Iteration cap (default from config)
        config: Solver configuration

    Returns:
        SolveResult holding the best iterate
    """
    cfg = config or SolverConfig()
    tol = cfg.tol if tol is None else float(tol)
    max_iter = cfg.max_iter if max_iter is None else int(max_iter)

    if w0 is None:
        w0 = np.zeros(data.dim)
        w0[data.k] = 1.0
    w0 = _check_fixed(data, w0)

    problem = _ReducedProblem(data)
    x = w0[problem.free].copy()
    r = problem.residual(x)
    f = problem.value(x, r)
    q = x.size
    if q == 0:
        return SolveResult(w0.copy(), f, 0, True, "trivial")
    if _certified(problem, x, r, f, tol, cfg):
        return SolveResult(problem.to_full(x), f, 0, True, "certificate")

    g = problem.gradient(x, r)
    h = np.eye(q)
    fresh = True
    failures = stall = subgradient_steps = 0
    subgradient_mode = False
    converged, reason = False, "max_iter"
    iterations = 0

    for iterations in range(1, max_iter + 1):
        f_prev = f

        if not subgradient_mode:
            d = -h @ g
            slope = float(g @ d)
            if not np.isfinite(slope) or slope >= 0.0:
                h, fresh = np.eye(q), True
                d = -g
                slope = -float(g @ g)
            step = _armijo(problem, x, f, d, slope) if slope < 0.0 else None
            if step is None:
                h, fresh = np.eye(q), True
                step = _ladder_step(problem, x, r, f, cfg)
            if step is None:
                failures += 1
                if failures >= cfg.max_failed_directions:
                    subgradient_mode = True
                    logger.warning(f"Coordinate {data.k}: no descent direction after {failures} tries, switching to subgradient steps")
                continue

            failures = 0
            x_new, r_new, f_new = step
            g_new = problem.gradient(x_new, r_new)
            h, fresh = _bfgs_update(h, x_new - x, g_new - g, fresh)
            x, r, f, g = x_new, r_new, f_new, g_new
        else:
            subgradient_steps += 1
            v, _ = problem.min_norm_subgradient(x, r, cfg.kink_tols[0])
            norm_v = float(np.linalg.norm(v))
            if norm_v > 0.0:
                t = cfg.subgradient_step * max(1.0, float(np.linalg.norm(x))) / np.sqrt(subgradient_steps)
                x_try = x - t * v / norm_v
                r_try = problem.residual(x_try)
                f_try = problem.value(x_try, r_try)
                if f_try < f:
                    x, r, f = x_try, r_try, f_try
                    g = problem.gradient(x, r)

        stall = stall + 1 if f_prev - f < tol * (1.0 + abs(f)) else 0
        if _certified(problem, x, r, f, tol, cfg):
            converged, reason = True, "certificate"
            break
        if stall >= cfg.stall_iterations:
            converged, reason = True, "stall"
            break

    logger.debug(f"Coordinate {data.k}: f={f:.6e} after {iterations} iterations ({reason})")
    return SolveResult(problem.to_full(x), f, iterations, converged, reason)
