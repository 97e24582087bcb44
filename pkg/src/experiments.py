"""
Experiments Module
Simulation harness: perturbation-level sensitivity, sample-size crossings, recovery phase diagram,
timing, the two-dimensional counter-example, single recovery / single test runs and the
theoretical phase-transition curves. Each command returns an ExperimentResult that is written as
CSV or JSON with a summary block.
"""

import math
import time
import logging
import multiprocessing as mp
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .coeff_models import (
    CoefficientModel,
    SamplingConfig,
    load_signal_set,
    sample_counterexample,
)
from .dictionary import (
    Dictionary,
    constant_collinearity_dictionary,
    load_dictionary,
    make_dictionary,
    nmse,
    random_gaussian_dictionary,
    save_dictionary,
)
from .dl_bcd import BcdConfig, run as run_bcd
from .errors import DictLearnError, ParameterError, SolverError
from .identifiability import critical_coherence, report as identifiability_report
from .rng import derive_seed
from .sharpness_test import SharpTestConfig, sharp_test
from .subproblem_solver import SolverConfig
from .utils import (
    get_timestamp,
    load_matrix_csv,
    print_header,
    print_summary,
    save_matrix_csv,
    save_metadata,
    write_table,
)

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json")
NEAR_SINGULAR_SIN = 1e-6

# Code defaults; the experiments section of config.yaml and CLI flags override them.
# rho and threshold left at None fall back to the sharp_test section, the DL-BCD settings of
# recover to the bcd section.
DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "sharpness": {
        "K": 20, "s": 10, "n": 1600, "offsets": [0.1, -0.2],
        "rhos": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3], "threshold": 1e-6, "seeds": 20, "snr": math.inf,
    },
    "sample_size": {
        "K_list": [12, 16, 20], "n_list": [100, 150, 200, 250, 300, 350, 400, 500, 600],
        "s": 5, "mu": 0.5, "rho": 0.01, "threshold": 1e-6, "seeds": 20,
    },
    "phase_diagram": {
        "K_list": [2, 4, 6, 8, 10], "s_min": 2, "s_list": None, "samples_per_dim": 100,
        "snr": 100.0, "tau": 0.5, "success_nmse": 0.01, "seeds": 20, "max_sweeps": 100,
    },
    "timing": {
        "K_fixed": 20, "n_list": [500, 1000, 2000, 3000, 4000, 5000], "n_fixed": 400,
        "K_list": [5, 10, 20, 30, 40, 50], "model": "bg", "p": 0.7, "s": 5, "mu": 0.5,
        "rho": 0.01, "repeats": 3,
    },
    "counterexample": {"n": 2000, "grid": 360, "rho": None, "threshold": None},
    "recover": {
        "signals": None, "reference": None, "K": 10, "s": 3, "n": 1000, "snr": 100.0, "mu": None,
        "tau": None, "init": None, "max_sweeps": None, "verbose": None,
    },
    "test_dict": {"dictionary": None, "signals": None, "rho": None, "threshold": None},
    "theory": {"K_list": [10, 20], "model": None, "K": None, "s": None, "p": None, "mu": None},
}

_LIST_PARAMS = {"offsets", "rhos", "K_list", "n_list", "s_list"}


@dataclass
class ExperimentConfig:
    """Parameter grid of one command plus output settings."""
    command: str
    params: Dict[str, Any]
    out: str
    fmt: str = "csv"
    threads: int = 1
    seed: int = 2024
    solver: SolverConfig = field(default_factory=SolverConfig)
    sharp: SharpTestConfig = field(default_factory=SharpTestConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    bcd: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.fmt not in FORMATS:
            raise ParameterError(f"format must be one of {FORMATS}, got '{self.fmt}'")
        if self.threads < 1:
            raise ParameterError(f"threads must be at least 1, got {self.threads}")
        for name, value in self.params.items():
            if name in _LIST_PARAMS and value is not None and len(value) == 0:
                raise ParameterError(f"grid '{name}' must not be empty")
        if "seeds" in self.params and int(self.params["seeds"]) < 1:
            raise ParameterError(f"seeds must be at least 1, got {self.params['seeds']}")

    @property
    def key(self) -> str:
        return self.command.replace("-", "_")

    @classmethod
    def from_config(cls, config: Dict, command: str, **overrides) -> "ExperimentConfig":
        """
        Merge code defaults, the experiments.<command> section and non-None overrides.

        Overrides named out, fmt/format, threads and seed go to the output settings; every other
        override must be a parameter of the command.
        """
        key = command.replace("-", "_")
        if key not in DEFAULT_PARAMS:
            raise ParameterError(f"unknown experiment '{command}'")
        exp_config = config.get("experiments", {}) or {}

        params = dict(DEFAULT_PARAMS[key])
        params.update({k: v for k, v in (exp_config.get(key, {}) or {}).items() if k in params})

        settings = {
            "out": str(Path(exp_config.get("out_dir", "results")) / key),
            "fmt": exp_config.get("format", "csv"),
            "threads": int(exp_config.get("threads", 1)),
            "seed": int(exp_config.get("seed", 2024)),
        }
        for name, value in overrides.items():
            if value is None:
                continue
            name = "fmt" if name == "format" else name
            if name in settings:
                settings[name] = value
            elif name in params:
                params[name] = value

        solver = SolverConfig.from_config(config)
        sharp = SharpTestConfig.from_config(config, solver=solver)
        for name, fallback in (('rho', sharp.rho), ('threshold', sharp.threshold)):
            if name in params and params[name] is None:
                params[name] = fallback

        return cls(
            command=command,
            params=params,
            solver=solver,
            sharp=sharp,
            sampling=SamplingConfig.from_config(config),
            bcd=dict(config.get("bcd", {}) or {}),
            **settings,
        )


@dataclass
class ExperimentResult:
    """Trial rows (grid coordinates, measurement, seed) plus a summary block."""
    columns: List[str]
    rows: List[Tuple]
    summary: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Tuple[List[str], List[Tuple]]] = field(default_factory=dict)
    matrices: Dict[str, np.ndarray] = field(default_factory=dict)
    documents: Dict[str, Dict] = field(default_factory=dict)

    def write(self, out: str, fmt: str = "csv") -> Dict[str, str]:
        """Write the main table, extra tables, matrices and JSON documents next to out."""
        base = Path(out)
        paths = {"table": write_table(self.columns, self.rows, str(base), fmt, self.summary)}
        for name, (columns, rows) in self.tables.items():
            paths[name] = write_table(columns, rows, str(base.with_name(f"{base.name}_{name}")), fmt)
        for name, matrix in self.matrices.items():
            path = str(base.with_name(f"{base.name}_{name}.csv"))
            save_matrix_csv(matrix, path)
            paths[name] = path
        for name, document in self.documents.items():
            path = str(base.with_name(f"{base.name}_{name}.json"))
            save_metadata(document, path)
            paths[name] = path
        return paths


# ---------------------------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------------------------

def _log_likelihood(b: np.ndarray, design: np.ndarray, y: np.ndarray) -> float:
    z = design @ b
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def fit_logistic(x: Sequence[float], y: Sequence[float], max_steps: int = 50) -> Optional[Tuple[float, float]]:
    """
    Maximum-likelihood logistic regression P(y=1) = sigmoid(b0 + b1 x) by Newton steps with step
    halving. Returns None when every outcome is 0 or every outcome is 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0 or np.all(y == y[0]):
        return None

    center = float(x.mean())
    spread = float(x.std()) or 1.0
    xs = (x - center) / spread
    design = np.column_stack([np.ones_like(xs), xs])

    # Start at the empirical crossing: first grid value whose success fraction reaches 1/2
    grid = np.unique(xs)
    fractions = np.array([y[xs == g].mean() for g in grid])
    above = np.flatnonzero(fractions >= 0.5)
    start = grid[above[0]] if above.size else grid[-1]
    b = np.array([-start, 1.0])

    current = _log_likelihood(b, design, y)
    for _ in range(max_steps):
        prob = 1.0 / (1.0 + np.exp(-(design @ b)))
        gradient = design.T @ (y - prob)
        hessian = design.T @ (design * (prob * (1.0 - prob))[:, None])
        try:
            step = np.linalg.solve(hessian + 1e-12 * np.eye(2), gradient)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-10:
            candidate = b + t * step
            value = _log_likelihood(candidate, design, y)
            if value >= current:
                break
            t *= 0.5
        else:
            break
        b, previous, current = candidate, current, value
        if np.max(np.abs(t * step)) < 1e-10 or abs(current - previous) < 1e-14:
            break

    b1 = b[1] / spread
    b0 = b[0] - b[1] * center / spread
    return float(b0), float(b1)


def crossing_point(coefficients: Optional[Tuple[float, float]]) -> Optional[float]:
    """The x at which the fitted success probability equals 1/2."""
    if coefficients is None or coefficients[1] == 0.0:
        return None
    b0, b1 = coefficients
    return -b0 / b1


def loglog_slope(x: Sequence[float], t: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log t against log x; None with fewer than two distinct x."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    keep = (x > 0) & (t > 0)
    if np.unique(x[keep]).size < 2:
        return None
    slope, _ = np.polyfit(np.log(x[keep]), np.log(t[keep]), 1)
    return float(slope)


# ---------------------------------------------------------------------------------------------
# Worker pool
# ---------------------------------------------------------------------------------------------

def _run_tasks(worker: Callable, tasks: List[Tuple], threads: int) -> List[Tuple]:
    """
    Fan tasks out over a spawn-context process pool; workers return (key, value, error) and
    never raise. Results come back sorted by key.
    """
    results = []
    if threads <= 1 or len(tasks) <= 1:
        results = [worker(task) for task in tasks]
    else:
        with mp.get_context("spawn").Pool(processes=threads) as pool:
            for key, value, err in pool.imap_unordered(worker, tasks):
                results.append((key, value, err))
    for key, _, err in results:
        if err:
            logger.warning(f"Trial {key} failed: {err}")
    return sorted(results, key=lambda item: item[0])


def _sharp_trial(task: Tuple) -> Tuple:
    key, p = task
    try:
        reference = constant_collinearity_dictionary(p["K"], p["mu"])
        model = CoefficientModel.sparse_gaussian(p["K"], p["s"])
        sampling = p["sampling"]
        coeffs = sampling.coefficients(model, p["n"], p["data_seed"])
        signals = sampling.signals(reference, coeffs, p.get("snr", math.inf), p["data_seed"], model=model)
        cfg = replace(p["sharp"], rho=p["rho"], threshold=p["threshold"], seed=p["perturb_seed"])
        result = sharp_test(reference, signals, cfg)
        return key, (result.r, result.is_sharp, "ok"), None
    except SolverError as e:
        r = e.report.r if e.report is not None else None
        return key, (r, None, "unconverged"), None
    except Exception as e:
        return key, None, f"{type(e).__name__}: {e}"


def _recovery_trial(task: Tuple) -> Tuple:
    key, p = task
    try:
        reference = random_gaussian_dictionary(p["K"], p["dict_seed"])
        model = CoefficientModel.sparse_gaussian(p["K"], p["s"])
        coeffs = p["sampling"].coefficients(model, p["n"], p["data_seed"])
        signals = p["sampling"].signals(reference, coeffs, p["snr"], p["data_seed"], model=model)
        cfg = BcdConfig(tau=p["tau"], max_sweeps=p["max_sweeps"], seed=p["init_seed"], init="random",
                        stop_rel_tol=p.get("stop_rel_tol", 1e-10), solver=p["solver"])
        estimate, trace = run_bcd(signals, cfg)
        error = nmse(estimate, reference)
        return key, (error, error < p["success_nmse"], trace.sweeps_run, "ok"), None
    except Exception as e:
        return key, None, f"{type(e).__name__}: {e}"


def _mu_for_offset(dim: int, s: int, offset: float) -> float:
    """mu = (1/sqrt(s)) ((K - s)/(K - 1) + offset)."""
    return ((dim - s) / (dim - 1) + offset) / math.sqrt(s)


# ---------------------------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------------------------

def run_sharpness(cfg: ExperimentConfig) -> ExperimentResult:
    """Sharp-test verdicts over perturbation levels on both sides of the sharpness boundary."""
    p = cfg.params
    dim, s, seeds = int(p["K"]), int(p["s"]), int(p["seeds"])
    tasks = []
    for oi, offset in enumerate(p["offsets"]):
        mu = _mu_for_offset(dim, s, float(offset))
        for ri, rho in enumerate(p["rhos"]):
            for trial in range(seeds):
                tasks.append(((oi, ri, trial), {
                    "K": dim, "s": s, "n": int(p["n"]), "mu": mu, "rho": float(rho),
                    "threshold": float(p["threshold"]), "snr": float(p["snr"]),
                    "data_seed": derive_seed(cfg.seed, oi, trial),
                    "perturb_seed": derive_seed(cfg.seed, oi, ri, trial, 1),
                    "sharp": cfg.sharp, "sampling": cfg.sampling,
                }))
        logger.info(f"Queued offset {offset:+.3f} (mu={mu:.5f}): {len(p['rhos'])} rho values x {seeds} seeds")

    rows, summary = [], {}
    for (oi, ri, trial), value, err in _run_tasks(_sharp_trial, tasks, cfg.threads):
        offset, rho = float(p["offsets"][oi]), float(p["rhos"][ri])
        r, is_sharp, status = value if value else (None, None, "failed")
        rows.append((offset, _mu_for_offset(dim, s, offset), rho, trial, r, is_sharp, status))

    for offset in p["offsets"]:
        for rho in p["rhos"]:
            verdicts = [row[5] for row in rows if row[0] == float(offset) and row[2] == float(rho) and row[5] is not None]
            summary[f"offset={float(offset):+g},rho={float(rho):g}"] = {
                "sharp_fraction": float(np.mean(verdicts)) if verdicts else None,
                "valid_trials": len(verdicts),
            }
    return ExperimentResult(["offset", "mu", "rho", "seed", "r", "is_sharp", "status"], rows, summary)


def run_sample_size(cfg: ExperimentConfig) -> ExperimentResult:
    """Sharp fraction against n per K, logistic 50% crossing and its linear trend in K."""
    p = cfg.params
    seeds = int(p["seeds"])
    tasks = []
    for ki, dim in enumerate(p["K_list"]):
        for ni, n in enumerate(p["n_list"]):
            for trial in range(seeds):
                tasks.append(((ki, ni, trial), {
                    "K": int(dim), "s": int(p["s"]), "n": int(n), "mu": float(p["mu"]),
                    "rho": float(p["rho"]), "threshold": float(p["threshold"]),
                    "data_seed": derive_seed(cfg.seed, ki, ni, trial),
                    "perturb_seed": derive_seed(cfg.seed, ki, ni, trial, 1),
                    "sharp": cfg.sharp, "sampling": cfg.sampling,
                }))

    rows = []
    for (ki, ni, trial), value, err in _run_tasks(_sharp_trial, tasks, cfg.threads):
        r, is_sharp, status = value if value else (None, None, "failed")
        rows.append((int(p["K_list"][ki]), int(p["n_list"][ni]), trial, r, is_sharp, status))

    crossings, summary = {}, {"per_K": {}}
    for dim in p["K_list"]:
        dim = int(dim)
        valid = [(row[1], float(row[4])) for row in rows if row[0] == dim and row[4] is not None]
        fit = fit_logistic([v[0] for v in valid], [v[1] for v in valid]) if valid else None
        n50 = crossing_point(fit)
        if n50 is None:
            logger.warning(f"K={dim}: degenerate logistic fit, 50% crossing unavailable")
        else:
            crossings[dim] = n50
        fractions = {}
        for n in p["n_list"]:
            outcomes = [v[1] for v in valid if v[0] == int(n)]
            fractions[int(n)] = float(np.mean(outcomes)) if outcomes else None
        summary["per_K"][str(dim)] = {
            "success_fraction": fractions,
            "logistic": list(fit) if fit else None,
            "n50": n50 if n50 is not None else "unavailable",
        }

    if len(crossings) >= 2:
        a, b = np.polyfit(list(crossings.keys()), list(crossings.values()), 1)
        summary["n50_linear_fit"] = {"slope": float(a), "intercept": float(b)}
    else:
        summary["n50_linear_fit"] = "unavailable"
    return ExperimentResult(["K", "n", "seed", "r", "is_sharp", "status"], rows, summary)


def run_phase_diagram(cfg: ExperimentConfig) -> ExperimentResult:
    """DL-BCD recovery rate over (K, s) with random Gaussian references and noisy SG signals."""
    p = cfg.params
    seeds = int(p["seeds"])
    stop_rel_tol = float(cfg.bcd.get("stop_rel_tol", 1e-10))
    tasks = []
    for ki, dim in enumerate(p["K_list"]):
        dim = int(dim)
        s_values = p["s_list"] if p.get("s_list") else range(int(p["s_min"]), dim + 1)
        for s in s_values:
            s = int(s)
            if not 1 <= s <= dim:
                continue
            for trial in range(seeds):
                tasks.append(((dim, s, trial), {
                    "K": dim, "s": s, "n": int(p["samples_per_dim"]) * dim, "snr": float(p["snr"]),
                    "tau": float(p["tau"]), "max_sweeps": int(p["max_sweeps"]),
                    "success_nmse": float(p["success_nmse"]), "stop_rel_tol": stop_rel_tol,
                    "dict_seed": derive_seed(cfg.seed, ki, s, trial, 0),
                    "data_seed": derive_seed(cfg.seed, ki, s, trial, 1),
                    "init_seed": derive_seed(cfg.seed, ki, s, trial, 2),
                    "solver": cfg.solver, "sampling": cfg.sampling,
                }))

    rows = []
    for (dim, s, trial), value, err in _run_tasks(_recovery_trial, tasks, cfg.threads):
        error, success, sweeps, status = value if value else (None, None, None, "failed")
        rows.append(("dl-bcd", dim, s, trial, error, success, sweeps, status))

    rates = {}
    for dim, s in sorted({(row[1], row[2]) for row in rows}):
        outcomes = [row[5] for row in rows if row[1] == dim and row[2] == s and row[5] is not None]
        rates[f"K={dim},s={s}"] = float(np.mean(outcomes)) if outcomes else None
    rate_rows = [(dim, s, rates[f"K={dim},s={s}"]) for dim, s in sorted({(row[1], row[2]) for row in rows})]
    return ExperimentResult(
        ["algorithm", "K", "s", "seed", "nmse", "success", "sweeps", "status"], rows,
        {"recovery_rate": rates, "tau": float(p["tau"]), "success_nmse": float(p["success_nmse"])},
        tables={"rates": (["K", "s", "recovery_rate"], rate_rows)},
    )


def _timing_model(p: Dict, dim: int) -> CoefficientModel:
    if str(p["model"]).lower() == "bg":
        return CoefficientModel.bernoulli_gaussian(dim, float(p["p"]))
    return CoefficientModel.from_name(str(p["model"]), dim, s=min(int(p["s"]), dim), p=p.get("p"))


def _time_sharp_test(cfg: ExperimentConfig, dim: int, n: int, seed: int) -> Tuple[float, str]:
    p = cfg.params
    reference = constant_collinearity_dictionary(dim, float(p["mu"]))
    model = _timing_model(p, dim)
    coeffs = cfg.sampling.coefficients(model, n, seed)
    signals = cfg.sampling.signals(reference, coeffs, math.inf, seed, model=model)
    test_cfg = replace(cfg.sharp, rho=float(p["rho"]), seed=derive_seed(seed, 1))
    start = time.perf_counter()
    status = "ok"
    try:
        sharp_test(reference, signals, test_cfg)
    except SolverError:
        status = "unconverged"
    return time.perf_counter() - start, status


def run_timing(cfg: ExperimentConfig) -> ExperimentResult:
    """Wall-clock of the sharp test over an n grid (fixed K) and a K grid (fixed n), with log-log slopes."""
    p = cfg.params
    repeats = int(p["repeats"])
    rows = []
    for gi, n in enumerate(p["n_list"]):
        for rep in range(repeats):
            seconds, status = _time_sharp_test(cfg, int(p["K_fixed"]), int(n), derive_seed(cfg.seed, 0, gi, rep))
            rows.append(("n", int(p["K_fixed"]), int(n), rep, seconds, status))
        logger.info(f"Timed K={p['K_fixed']}, n={n}")
    for gi, dim in enumerate(p["K_list"]):
        for rep in range(repeats):
            seconds, status = _time_sharp_test(cfg, int(dim), int(p["n_fixed"]), derive_seed(cfg.seed, 1, gi, rep))
            rows.append(("K", int(dim), int(p["n_fixed"]), rep, seconds, status))
        logger.info(f"Timed K={dim}, n={p['n_fixed']}")

    def medians(axis: str, column: int) -> Tuple[List[float], List[float]]:
        xs = sorted({row[column] for row in rows if row[0] == axis})
        return xs, [float(np.median([row[4] for row in rows if row[0] == axis and row[column] == x])) for x in xs]

    n_x, n_t = medians("n", 2)
    k_x, k_t = medians("K", 1)
    slope_n, slope_k = loglog_slope(n_x, n_t), loglog_slope(k_x, k_t)
    summary = {
        "slope_vs_n": slope_n if slope_n is not None else "unavailable",
        "slope_vs_K": slope_k if slope_k is not None else "unavailable",
        "model": str(p["model"]), "mu": float(p["mu"]),
    }
    return ExperimentResult(["axis", "K", "n", "repeat", "seconds", "status"], rows, summary)


def _angle_l1(signals: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """g(theta) = mean_i |sin(theta) y_i1 - cos(theta) y_i2|."""
    return np.abs(np.outer(signals[:, 0], np.sin(thetas)) - np.outer(signals[:, 1], np.cos(thetas))).mean(axis=0)


def counterexample_surface(signals: np.ndarray, grid: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    L(D) over D = [(cos t1, sin t1), (cos t2, sin t2)] for t1, t2 in {pi i / grid}.

    With det D = sin(t2 - t1), L = (g(t1) + g(t2)) / |sin(t2 - t1)|. Near-singular pairs
    (|sin(t2 - t1)| < 1e-6) are NaN.
    """
    thetas = np.pi * np.arange(grid) / grid
    g = _angle_l1(signals, thetas)
    det = np.abs(np.sin(thetas[None, :] - thetas[:, None]))
    with np.errstate(divide="ignore", invalid="ignore"):
        surface = (g[:, None] + g[None, :]) / det
    surface[det < NEAR_SINGULAR_SIN] = np.nan
    return thetas, surface


def run_counterexample(cfg: ExperimentConfig) -> ExperimentResult:
    """l1 landscape of the two-dimensional mixture model whose identity reference is sharp but not global."""
    p = cfg.params
    n, grid = int(p["n"]), int(p["grid"])
    coeffs = sample_counterexample(n, cfg.seed)
    identity = make_dictionary(np.eye(2))
    signals = cfg.sampling.signals(identity, coeffs, math.inf, cfg.seed).signals

    thetas, surface = counterexample_surface(signals, grid)
    rows = []
    for i, t1 in enumerate(thetas):
        for j, t2 in enumerate(thetas):
            value = surface[i, j]
            rows.append((float(t1), float(t2), None if np.isnan(value) else float(value), "skipped" if np.isnan(value) else "ok"))

    reference_value = float(np.abs(signals).sum() / n)
    best = np.unravel_index(np.nanargmin(surface), surface.shape)
    grid_min = float(surface[best])

    g = _angle_l1(signals, thetas)
    g_orth = _angle_l1(signals, thetas + np.pi / 2)
    orth_rows = [(float(t), float(t + np.pi / 2), float(a + b)) for t, a, b in zip(thetas, g, g_orth)]

    try:
        test = sharp_test(identity, signals, replace(
            cfg.sharp, rho=float(p["rho"]), threshold=float(p["threshold"]), seed=derive_seed(cfg.seed, 1)))
        verdict, r = test.is_sharp, test.r
    except SolverError as e:
        verdict, r = None, e.report.r if e.report is not None else None
        logger.warning("Sharp test at the identity reference did not converge")

    summary = {
        "reference_objective": reference_value,
        "grid_min_objective": grid_min,
        "grid_min_theta1": float(thetas[best[0]]),
        "grid_min_theta2": float(thetas[best[1]]),
        "reference_is_global_on_grid": grid_min >= reference_value,
        "reference_is_sharp": verdict,
        "reference_r": r,
        "skipped_points": int(np.isnan(surface).sum()),
    }
    return ExperimentResult(
        ["theta1", "theta2", "objective", "status"], rows, summary,
        tables={"orthogonal": (["theta1", "theta2", "objective"], orth_rows)},
    )


def run_recover(cfg: ExperimentConfig) -> ExperimentResult:
    """Single DL-BCD run on a signal CSV or freshly generated SG data."""
    p = cfg.params
    reference: Optional[Dictionary] = load_dictionary(p["reference"]) if p.get("reference") else None

    if p.get("signals"):
        path = Path(p["signals"])
        if path.suffix == ".csv":
            signals = load_matrix_csv(str(path))
        else:
            signals = load_signal_set(str(path)).signals
    else:
        dim, s = int(p["K"]), int(p["s"])
        if p.get("mu") is not None:
            reference = constant_collinearity_dictionary(dim, float(p["mu"]))
        else:
            reference = random_gaussian_dictionary(dim, derive_seed(cfg.seed, 0))
        model = CoefficientModel.sparse_gaussian(dim, s)
        coeffs = cfg.sampling.coefficients(model, int(p["n"]), derive_seed(cfg.seed, 1))
        signals = cfg.sampling.signals(reference, coeffs, float(p["snr"]), derive_seed(cfg.seed, 1), model=model).signals

    bcd_cfg = BcdConfig.from_config(
        {"bcd": cfg.bcd, "solver": {}},
        tau=p["tau"], init=p["init"], max_sweeps=p["max_sweeps"],
        seed=derive_seed(cfg.seed, 2), verbose=p["verbose"], solver=cfg.solver,
    )
    estimate, trace = run_bcd(signals, bcd_cfg, reference=reference)

    summary = {
        "sweeps": trace.sweeps_run,
        "initial_objective": trace.objective_per_sweep[0],
        "final_objective": trace.objective_per_sweep[-1],
        "nmse": trace.nmse_per_sweep[-1] if trace.nmse_per_sweep else None,
        "unconverged_solves": trace.unconverged_solves,
    }
    tables = {}
    if trace.coordinate_objectives:
        tables["coordinates"] = (["step", "objective"], list(enumerate(trace.coordinate_objectives)))
    return ExperimentResult(["sweep", "objective", "nmse"], trace.rows(), summary, tables=tables,
                            matrices={"dictionary": estimate.matrix})


def run_test_dict(cfg: ExperimentConfig) -> ExperimentResult:
    """One sharp test on a user-supplied dictionary and signal CSV."""
    p = cfg.params
    if not p.get("dictionary") or not p.get("signals"):
        raise ParameterError("test-dict needs --dictionary and --signals")
    dictionary = load_dictionary(p["dictionary"])
    signals = load_matrix_csv(p["signals"])
    test_cfg = replace(cfg.sharp, rho=float(p["rho"]), threshold=float(p["threshold"]), seed=cfg.seed)
    result = sharp_test(dictionary, signals, test_cfg)
    rows = [(k, float(d)) for k, d in enumerate(result.per_coordinate)]
    return ExperimentResult(["coordinate", "squared_distance"], rows, result.to_json(),
                            documents={"report": result.to_json()})


def run_theory(cfg: ExperimentConfig) -> ExperimentResult:
    """Critical coherence of SG(s) and SL(s) over s for each K, plus one optional identifiability report."""
    p = cfg.params
    rows = []
    for dim in p["K_list"]:
        dim = int(dim)
        for s in range(1, dim):
            mu_sg = critical_coherence(CoefficientModel.sparse_gaussian(dim, s))
            mu_sl = critical_coherence(CoefficientModel.sparse_laplacian(dim, s))
            rows.append((dim, s, mu_sg, mu_sl))

    summary: Dict[str, Any] = {}
    if p.get("model") and p.get("K") and p.get("mu") is not None:
        model = CoefficientModel.from_name(str(p["model"]), int(p["K"]), s=p.get("s"), p=p.get("p"))
        summary["report"] = identifiability_report(model, float(p["mu"])).to_json()
    return ExperimentResult(["K", "s", "critical_mu_sg", "critical_mu_sl"], rows, summary)


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "sharpness": run_sharpness,
    "sample-size": run_sample_size,
    "phase-diagram": run_phase_diagram,
    "timing": run_timing,
    "counterexample": run_counterexample,
    "recover": run_recover,
    "test-dict": run_test_dict,
    "theory": run_theory,
}


# ---------------------------------------------------------------------------------------------
# CLI entry points
# ---------------------------------------------------------------------------------------------

def execute(command: str, config: Dict, overrides: Dict[str, Any]) -> int:
    """
    Build the experiment config, run the command and write its outputs.

    Returns:
        0 on success, 1 on runtime failure, 2 on invalid parameters
    """
    try:
        exp_cfg = ExperimentConfig.from_config(config, command, **overrides)
    except ParameterError as e:
        logger.error(f"Invalid parameters for '{command}': {e}")
        return 2

    print_header(f"L1 Dictionary Learning - {command}")
    metadata = {
        "command": command,
        "start_time": get_timestamp(),
        "seed": exp_cfg.seed,
        "params": exp_cfg.params,
        "format": exp_cfg.fmt,
    }
    started = time.perf_counter()
    try:
        result = RUNNERS[command](exp_cfg)
        metadata["outputs"] = result.write(exp_cfg.out, exp_cfg.fmt)
        metadata["rows"] = len(result.rows)
        metadata["status"] = "completed"
    except ParameterError as e:
        logger.error(f"Invalid parameters for '{command}': {e}")
        return 2
    except (DictLearnError, OSError, ValueError) as e:
        logger.error(f"'{command}' failed: {e}", exc_info=True)
        metadata["status"] = "failed"
        metadata["error"] = str(e)
        if isinstance(e, DictLearnError) and e.report is not None and hasattr(e.report, "to_json"):
            metadata["report"] = e.report.to_json()
        _save_run_metadata(exp_cfg, metadata)
        return 1

    metadata["end_time"] = get_timestamp()
    metadata["elapsed_seconds"] = time.perf_counter() - started
    _save_run_metadata(exp_cfg, metadata)
    print_summary({
        "Command": command,
        "Rows": len(result.rows),
        "Output": metadata["outputs"]["table"],
        "Elapsed": f"{metadata['elapsed_seconds']:.1f}s",
    })
    return 0


def _save_run_metadata(exp_cfg: ExperimentConfig, metadata: Dict) -> None:
    try:
        save_metadata(metadata, str(Path(exp_cfg.out).with_suffix(".meta.json")))
    except OSError as e:
        logger.error(f"Could not save run metadata: {e}")


def cmd_sharpness(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("sharpness", config, overrides)


def cmd_sample_size(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("sample-size", config, overrides)


def cmd_phase_diagram(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("phase-diagram", config, overrides)


def cmd_timing(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("timing", config, overrides)


def cmd_counterexample(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("counterexample", config, overrides)


def cmd_recover(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("recover", config, overrides)


def cmd_test_dict(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("test-dict", config, overrides)


def cmd_theory(config: Dict, overrides: Dict[str, Any]) -> int:
    return execute("theory", config, overrides)


COMMANDS: Dict[str, Callable[[Dict, Dict[str, Any]], int]] = {
    "sharpness": cmd_sharpness,
    "sample-size": cmd_sample_size,
    "phase-diagram": cmd_phase_diagram,
    "timing": cmd_timing,
    "counterexample": cmd_counterexample,
    "recover": cmd_recover,
    "test-dict": cmd_test_dict,
    "theory": cmd_theory,
}
