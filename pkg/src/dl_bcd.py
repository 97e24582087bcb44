"""
DL-BCD Module
Block coordinate descent over the rows of Q = D^-1. Each row update keeps the columns of Q^-1 at
unit norm, and the tau-truncated objective f(D) = sum_i sum_j min(|D^-1[j,] y_i|, tau) never
increases across sweeps.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .coeff_models import SignalSet
from .dictionary import Dictionary, make_dictionary, nmse, random_gaussian_dictionary
from .errors import ContractError, NormalizationError, ParameterError, RankError, ShapeError
from .rng import derive_seed, make_generator
from .subproblem_solver import SolverConfig, SubproblemData, solve

logger = logging.getLogger(__name__)

INIT_CHOICES = ("random", "signals", "given")
UNIT_COLUMN_TOL = 1e-8

_INIT_STREAM = 0x696E6974


@dataclass
class BcdConfig:
    tau: float = 0.5
    max_sweeps: int = 100
    stop_rel_tol: float = 1e-10
    init: str = "random"
    seed: int = 0
    verbose: bool = False
    init_dictionary: Optional[Dictionary] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.tau = float(self.tau)
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.max_sweeps < 1:
            raise ParameterError(f"max_sweeps must be at least 1, got {self.max_sweeps}")
        if self.init not in INIT_CHOICES:
            raise ParameterError(f"init must be one of {INIT_CHOICES}, got '{self.init}'")
        if self.init == "given" and self.init_dictionary is None:
            raise ParameterError("init='given' needs init_dictionary")

    @classmethod
    def from_config(cls, config: Dict, **overrides) -> "BcdConfig":
        section = dict(config.get('bcd', {}) or {})
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)} - {'solver'}
        kwargs = {k: v for k, v in section.items() if k in known}
        solver = section.get('solver')
        if not isinstance(solver, SolverConfig):
            solver = SolverConfig.from_config(config)
        return cls(solver=solver, **kwargs)


@dataclass
class BcdTrace:
    """
    Per-sweep record of a run. Index 0 holds the value at the initial dictionary, index t the
    value after sweep t.
    """
    objective_per_sweep: List[float] = field(default_factory=list)
    nmse_per_sweep: List[float] = field(default_factory=list)
    coordinate_objectives: List[float] = field(default_factory=list)
    sweeps_run: int = 0
    unconverged_solves: int = 0
    final: Optional[Dictionary] = None
    error: Optional[str] = None

    def rows(self) -> List[Tuple]:
        """(sweep, objective, nmse) rows; nmse is None without a reference."""
        out = []
        for t, value in enumerate(self.objective_per_sweep):
            err = self.nmse_per_sweep[t] if t < len(self.nmse_per_sweep) else None
            out.append((t, value, err))
        return out


def _signal_matrix(signals: Union[SignalSet, np.ndarray]) -> np.ndarray:
    if isinstance(signals, SignalSet):
        return signals.signals
    return np.atleast_2d(np.asarray(signals, dtype=float))


def _objective_from_q(q: np.ndarray, signals: np.ndarray, tau: float) -> float:
    return float(np.minimum(np.abs(signals @ q.T), tau).sum())


def truncated_objective(dictionary: Dictionary, signals: Union[SignalSet, np.ndarray], tau: float) -> float:
    """f(D) = sum_i sum_j min(|D^-1[j,] y_i|, tau); tau = inf gives sum_i ||D^-1 y_i||_1."""
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    return float(np.minimum(np.abs(dictionary.coefficients(_signal_matrix(signals))), tau).sum())


def _row_scales(m_row: np.ndarray, w: np.ndarray, k: int, clamp: float) -> np.ndarray:
    bound = 1.0 - clamp
    m = np.clip(m_row, -bound, bound)
    scales = np.sqrt((w - m) ** 2 + (1.0 - m) * (1.0 + m))
    scales[k] = 1.0
    return scales


def _row_update(q: np.ndarray, d: np.ndarray, k: int, w: np.ndarray, clamp: float) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the row update to q and return (q_new, inverse of q_new) after checking feasibility."""
    m_row = d.T @ d[:, k]
    scales = _row_scales(m_row, w, k, clamp)
    q_new = q * scales[:, None]
    q_new[k] = w @ q
    try:
        d_new = np.linalg.inv(q_new)
    except np.linalg.LinAlgError as e:
        raise RankError(f"row update at coordinate {k} produced a singular matrix") from e
    if not np.all(np.isfinite(d_new)):
        raise RankError(f"row update at coordinate {k} produced a singular matrix")

    deviation = float(np.max(np.abs(np.linalg.norm(d_new, axis=0) - 1.0)))
    if deviation > UNIT_COLUMN_TOL:
        raise NormalizationError(f"row update at coordinate {k} broke unit columns (deviation {deviation:.2e})")
    return q_new, d_new


def row_update_matrix(q: np.ndarray, dictionary: Dictionary, k: int, w: np.ndarray, clamp: float = 1e-9) -> np.ndarray:
    """
    Replace row k of q by w^T q and scale every other row h by
    sqrt((w_h - M[k, h])^2 + 1 - M[k, h]^2), with M the collinearity of dictionary = q^-1.

    Raises:
        ContractError: w[k] != 1
        RankError: the result is singular
        NormalizationError: the inverse of the result lost unit-norm columns
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    if q.shape != (dictionary.dim, dictionary.dim) or w.shape != (dictionary.dim,):
        raise ShapeError(f"q and w must match K={dictionary.dim}")
    if w[k] != 1.0:
        raise ContractError(f"w[{k}] must equal 1, got {w[k]!r}")
    q_new, _ = _row_update(q, dictionary.matrix, k, w, clamp)
    return q_new


def _initial_dictionary(signals: np.ndarray, cfg: BcdConfig) -> Dictionary:
    dim = signals.shape[1]
    if cfg.init == "given":
        if cfg.init_dictionary.dim != dim:
            raise ShapeError(f"initial dictionary has K={cfg.init_dictionary.dim}, signals have {dim}")
        return cfg.init_dictionary
    if cfg.init == "signals":
        n = signals.shape[0]
        if n >= dim:
            rng = make_generator(cfg.seed, _INIT_STREAM)
            rows = rng.choice(n, size=dim, replace=False)
            try:
                return make_dictionary(signals[rows].T)
            except (RankError, NormalizationError) as e:
                logger.warning(f"Signal-column initialization failed ({e}); using a random Gaussian dictionary")
        else:
            logger.warning(f"Only {n} signals for K={dim}; using a random Gaussian dictionary")
    return random_gaussian_dictionary(dim, derive_seed(cfg.seed, _INIT_STREAM))


def run(
    signals: Union[SignalSet, np.ndarray],
    config: Optional[BcdConfig] = None,
    reference: Optional[Dictionary] = None
) -> Tuple[Dictionary, BcdTrace]:
    """
    Recover a dictionary by DL-BCD.

    Each sweep visits j = 0..K-1 in order: beta = Q y, m_h = <D_h, D_j>, solve the tau-truncated
    subproblem from e_j and update Q. Stops when the relative decrease of f over a sweep falls
    below stop_rel_tol or after max_sweeps sweeps.

    Args:
        signals: n x K signals (rows) or a SignalSet
        config: Run configuration
        reference: Optional true dictionary for the NMSE trace

    Returns:
        (final dictionary, trace)

    Raises:
        RankError: a row update became singular (the trace so far is attached as .report)
    """
    cfg = config or BcdConfig()
    y = _signal_matrix(signals)
    n, dim = y.shape
    if n < 1:
        raise ParameterError("need at least one signal")
    if reference is not None and reference.dim != dim:
        raise ShapeError(f"reference has K={reference.dim}, signals have {dim}")

    init = _initial_dictionary(y, cfg)
    q = np.array(init.inverse)
    d = np.array(init.matrix)
    trace = BcdTrace()

    f = _objective_from_q(q, y, cfg.tau)
    trace.objective_per_sweep.append(f)
    if reference is not None:
        trace.nmse_per_sweep.append(nmse(init, reference))
    logger.debug(f"DL-BCD start: K={dim}, n={n}, tau={cfg.tau}, f={f:.6e}")

    for sweep in range(1, cfg.max_sweeps + 1):
        try:
            for j in range(dim):
                beta = y @ q.T
                data = SubproblemData.build(beta, j, d.T @ d[:, j], tau=cfg.tau, clamp=cfg.solver.clamp)
                result = solve(data, config=cfg.solver)
                if not result.converged:
                    trace.unconverged_solves += 1
                q, d = _row_update(q, d, j, result.w, cfg.solver.clamp)
                if cfg.verbose:
                    trace.coordinate_objectives.append(_objective_from_q(q, y, cfg.tau))
        except (RankError, NormalizationError) as e:
            trace.sweeps_run = sweep - 1
            trace.error = str(e)
            logger.error(f"DL-BCD aborted in sweep {sweep}: {e}")
            raise RankError(f"DL-BCD aborted in sweep {sweep}: {e}", report=trace) from e

        f_new = _objective_from_q(q, y, cfg.tau)
        trace.objective_per_sweep.append(f_new)
        trace.sweeps_run = sweep
        if reference is not None:
            trace.nmse_per_sweep.append(nmse(make_dictionary(d), reference))

        relative = (f - f_new) / max(abs(f), np.finfo(float).tiny)
        f = f_new
        if relative < cfg.stop_rel_tol:
            break

    if trace.unconverged_solves:
        logger.warning(f"DL-BCD: {trace.unconverged_solves} subproblem solves hit max_iter")
    trace.final = make_dictionary(d)
    logger.debug(f"DL-BCD done after {trace.sweeps_run} sweeps, f={f:.6e}")
    return trace.final, trace
