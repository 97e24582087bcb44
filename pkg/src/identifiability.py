"""
Identifiability Module
Theoretical quantities behind sharpness of the reference dictionary: the bias matrix B(alpha, M),
the coefficient-induced semi-norm, closed-form dual norms for constant-collinearity references,
regularity constants, sharpness lower bounds and the radius of the region where the reference
objective is minimal.
"""

import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Dict, Optional, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from .coeff_models import SQRT_2_OVER_PI, CoefficientModel, ModelKind, expected_abs_coef
from .dictionary import CollinearityMatrix, constant_collinearity_dictionary, spectral_norm_sq
from .errors import CapacityError, NumericError, ParameterError, ShapeError, UnsupportedModelError

logger = logging.getLogger(__name__)

# |alpha| below this counts as an exact zero (stored zeros from the generators always qualify)
ZERO_TOL = 1e-12

MAX_SUBSETS = 1_000_000
LAPLACE_ABS_TOL = 1e-8

_CLOSED_FORM_KINDS = (
    ModelKind.SPARSE_GAUSSIAN,
    ModelKind.BERNOULLI_GAUSSIAN,
    ModelKind.NONNEG_SPARSE_GAUSSIAN,
    ModelKind.SPARSE_LAPLACIAN,
)


@dataclass(frozen=True)
class BiasMatrix:
    b: np.ndarray

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass
class IdentifiabilityReport:
    """
    Summary of the sharpness condition for a constant-collinearity reference.

    sharpness_lower_bound and region_radius are None when the model has no stated regularity
    constant.
    """
    dual_norm: float
    is_sharp_condition: bool
    sharpness_lower_bound: Optional[float]
    region_radius: Optional[float]
    regularity_constant: Optional[float]
    spectral_norm_sq: float
    model: str = ""
    mu: float = 0.0
    extras: Dict = field(default_factory=dict)

    @property
    def bounds_available(self) -> bool:
        return self.regularity_constant is not None

    def to_json(self) -> Dict:
        return {
            "dual_norm": self.dual_norm,
            "condition": self.is_sharp_condition,
            "sharpness": self.sharpness_lower_bound if self.bounds_available else "unavailable",
            "region_radius": self.region_radius if self.bounds_available else "unavailable",
            "c_alpha": self.regularity_constant if self.bounds_available else "unavailable",
            "spectral_norm_sq": self.spectral_norm_sq,
            "model": self.model,
            "mu": self.mu,
        }


def _zero_mask(coeffs: np.ndarray, zero_tol: float) -> np.ndarray:
    return np.abs(coeffs) < zero_tol


def _check_closed_form(model: CoefficientModel) -> None:
    if model.kind not in _CLOSED_FORM_KINDS:
        raise UnsupportedModelError(f"no closed form for {model.label}")


def _resolve_dim(model: CoefficientModel, dim: Optional[int]) -> int:
    if dim is not None and dim != model.dim:
        raise ParameterError(f"K={dim} does not match the model dimension {model.dim}")
    return model.dim


# ---------------------------------------------------------------------------------------------
# Bias matrix
# ---------------------------------------------------------------------------------------------

def bias_matrix_empirical(
    coeffs: np.ndarray,
    m: Union[CollinearityMatrix, np.ndarray],
    zero_tol: float = ZERO_TOL
) -> BiasMatrix:
    """
    B[k, j] = mean_i alpha_j sign(alpha_k) - M[j, k] mean_i |alpha_j|, with sign(0) = 0.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    gram = m.m if isinstance(m, CollinearityMatrix) else np.asarray(m, dtype=float)
    n, dim = coeffs.shape
    if n < 1:
        raise ParameterError("need at least one coefficient vector")
    if gram.shape != (dim, dim):
        raise ShapeError(f"collinearity matrix {gram.shape} does not match K={dim}")

    signs = np.where(_zero_mask(coeffs, zero_tol), 0.0, np.sign(coeffs))
    cross = signs.T @ coeffs / n
    mean_abs = np.abs(coeffs).mean(axis=0)
    return BiasMatrix(cross - gram.T * mean_abs[None, :])


def bias_matrix_closed_form(model: CoefficientModel, mu: float) -> BiasMatrix:
    """
    Constant off-diagonal bias for a constant-collinearity reference.

    SG: -sqrt(2/pi) mu s/K; |SG|: -sqrt(2/pi) (mu s/K - s(s-1)/(K(K-1)));
    BG: -sqrt(2/pi) mu p; SL: -mu s/K. The diagonal is zero.
    """
    _check_closed_form(model)
    dim = model.dim
    if model.kind == ModelKind.SPARSE_GAUSSIAN:
        value = -SQRT_2_OVER_PI * mu * model.s / dim
    elif model.kind == ModelKind.NONNEG_SPARSE_GAUSSIAN:
        if dim < 2:
            raise ParameterError("|SG| bias needs K >= 2")
        s = model.s
        value = -SQRT_2_OVER_PI * (mu * s / dim - s * (s - 1) / (dim * (dim - 1)))
    elif model.kind == ModelKind.BERNOULLI_GAUSSIAN:
        value = -SQRT_2_OVER_PI * mu * model.p
    else:
        value = -mu * model.s / dim

    b = np.full((dim, dim), value)
    np.fill_diagonal(b, 0.0)
    return BiasMatrix(b)


# ---------------------------------------------------------------------------------------------
# Semi-norm
# ---------------------------------------------------------------------------------------------

def seminorm_empirical(a: np.ndarray, coeffs: np.ndarray, zero_tol: float = ZERO_TOL) -> float:
    """Monte-Carlo |||A|||_alpha = sum_k E |sum_j A[k, j] alpha_j| 1(alpha_k = 0)."""
    a = np.asarray(a, dtype=float)
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    dim = coeffs.shape[1]
    if a.shape != (dim, dim):
        raise ShapeError(f"matrix {a.shape} does not match K={dim}")
    projected = np.abs(coeffs @ a.T)
    return float((projected * _zero_mask(coeffs, zero_tol)).sum() / coeffs.shape[0])


def seminorm_closed_form_sg(a: np.ndarray, s: int, dim: int) -> float:
    """
    Exact |||A|||_alpha under SG(s).

    Given a support S not containing k, sum_j A[k, j] alpha_j is Gaussian with standard deviation
    ||A[k, S]||_2, so the value is sqrt(2/pi) sum_k C(K, s)^-1 sum_{S not containing k} ||A[k, S]||_2.

    Raises:
        CapacityError: more than 10^6 subsets to enumerate
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (dim, dim):
        raise ShapeError(f"matrix {a.shape} does not match K={dim}")
    if not 1 <= s <= dim:
        raise ParameterError(f"s must satisfy 1 <= s <= K, got s={s}, K={dim}")
    total_subsets = math.comb(dim, s)
    if total_subsets > MAX_SUBSETS:
        raise CapacityError(f"C({dim}, {s}) = {total_subsets} subsets exceeds {MAX_SUBSETS}")

    subsets = np.array(list(combinations(range(dim), s)), dtype=int)
    total = 0.0
    for k in range(dim):
        keep = ~np.any(subsets == k, axis=1)
        if not keep.any():
            continue
        rows = a[k, subsets[keep]]
        total += np.linalg.norm(rows, axis=1).sum()
    return SQRT_2_OVER_PI * total / total_subsets


# ---------------------------------------------------------------------------------------------
# Dual norms and constants
# ---------------------------------------------------------------------------------------------

@lru_cache(maxsize=128)
def laplace_integral(s: int) -> float:
    """
    I(s) = E|X - Y| for independent X, Y ~ Gamma(s, 1).

    The difference has the symmetric variance-gamma density
    f(t) = |t|^(s-1/2) K_(s-1/2)(|t|) / (Gamma(s) sqrt(pi) 2^(s-1/2)), so I(s) = 2 int_0^inf t f(t) dt.
    The integrand is evaluated in logs with the exponentially scaled Bessel function.
    """
    if int(s) != s or s < 1:
        raise ParameterError(f"s must be a positive integer, got {s}")
    nu = s - 0.5
    log_norm = special.gammaln(s) + 0.5 * math.log(math.pi) + nu * math.log(2.0)

    def integrand(t: float) -> float:
        if t <= 0.0:
            return 0.0
        bessel = special.kve(nu, t)
        if not np.isfinite(bessel) or bessel <= 0.0:
            return 0.0
        return math.exp((s + 0.5) * math.log(t) + math.log(bessel) - t - log_norm)

    value, error = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or error > LAPLACE_ABS_TOL:
        raise NumericError(f"quadrature for I({s}) did not converge (error estimate {error:.2e})")
    return 2.0 * value


def laplace_integral_closed_form(s: int) -> float:
    """
    Closed form 2s C(2s, s) / 4^s (X + Y ~ Gamma(2s) is independent of X / (X + Y) ~ Beta(s, s)).
    """
    return float(math.exp(math.log(2 * s) + special.gammaln(2 * s + 1) - 2 * special.gammaln(s + 1) - s * math.log(4.0)))


def bg_dual_norm_approximation(mu: float, p: float, dim: int) -> float:
    """Jensen-simplified BG dual norm mu sqrt(p(K-1)) / (1 - p); never exceeds the exact value."""
    return abs(mu) * math.sqrt(p * (dim - 1)) / (1.0 - p)


def dual_norm_constant(model: CoefficientModel, mu: float, dim: Optional[int] = None) -> float:
    """
    Dual semi-norm of the constant bias matrix of a constant-collinearity reference.

    SG: mu sqrt(s) (K-1)/(K-s); |SG|: (K-1)/(K-s) |mu - (s-1)/(K-1)|;
    BG: mu p (K-1) / ((1-p) E sqrt(T)) with T ~ Binomial(K-1, p);
    SL: mu s (K-1) / ((K-s) I(s)).
    """
    _check_closed_form(model)
    dim = _resolve_dim(model, dim)
    mu = abs(float(mu)) if model.kind != ModelKind.NONNEG_SPARSE_GAUSSIAN else float(mu)

    if model.kind == ModelKind.BERNOULLI_GAUSSIAN:
        if dim < 2:
            raise ParameterError("the BG dual norm needs K >= 2")
        p = float(model.p)
        counts = np.arange(dim)
        expected_root = float(np.sum(stats.binom.pmf(counts, dim - 1, p) * np.sqrt(counts)))
        return mu * p * (dim - 1) / ((1.0 - p) * expected_root)

    s = int(model.s)
    if s >= dim:
        raise ParameterError(f"dual norm is undefined for s = K = {dim}")
    if model.kind == ModelKind.SPARSE_GAUSSIAN:
        return mu * math.sqrt(s) * (dim - 1) / (dim - s)
    if model.kind == ModelKind.NONNEG_SPARSE_GAUSSIAN:
        return (dim - 1) / (dim - s) * abs(mu - (s - 1) / (dim - 1))
    return mu * s * (dim - 1) / ((dim - s) * laplace_integral(s))


def regularity_constant(model: CoefficientModel) -> float:
    """
    c_alpha with |||A|||_alpha >= c_alpha ||A||_F on off-diagonal matrices.

    SG: s(K-s)/(K(K-1)) sqrt(2/pi); BG: p(1-p) sqrt(2/pi).
    """
    if model.kind == ModelKind.SPARSE_GAUSSIAN:
        dim, s = model.dim, model.s
        if dim < 2:
            raise ParameterError("regularity constant needs K >= 2")
        return s * (dim - s) / (dim * (dim - 1)) * SQRT_2_OVER_PI
    if model.kind == ModelKind.BERNOULLI_GAUSSIAN:
        return model.p * (1.0 - model.p) * SQRT_2_OVER_PI
    raise UnsupportedModelError(f"no regularity constant stated for {model.label}")


def sharpness_bound(model: CoefficientModel, mu: float, dim: Optional[int] = None) -> float:
    """c_alpha / (sqrt(2) ||D*||_2^2) * (1 - dual norm); negative when the condition fails."""
    dim = _resolve_dim(model, dim)
    c_alpha = regularity_constant(model)
    norm_sq = spectral_norm_sq(constant_collinearity_dictionary(dim, mu))
    return c_alpha / (math.sqrt(2.0) * norm_sq) * (1.0 - dual_norm_constant(model, mu, dim))


def region_bound(model: CoefficientModel, mu: float, dim: Optional[int] = None) -> float:
    """(1 - dual norm) c_alpha / (8 sqrt(2) ||D*||_2^2 max_j E|alpha_j|)."""
    dim = _resolve_dim(model, dim)
    c_alpha = regularity_constant(model)
    norm_sq = spectral_norm_sq(constant_collinearity_dictionary(dim, mu))
    return (1.0 - dual_norm_constant(model, mu, dim)) * c_alpha / (8.0 * math.sqrt(2.0) * norm_sq * expected_abs_coef(model))


def critical_coherence(model: CoefficientModel) -> float:
    """
    Smallest mu >= 0 at which the dual norm reaches 1 (the sharp / not-sharp boundary).

    Returns inf when the condition holds on all of [0, 1). For |SG| the sharp set is the interval
    |mu - (s-1)/(K-1)| < (K-s)/(K-1); its lower end is returned when positive, otherwise 1.
    """
    _check_closed_form(model)
    dim = model.dim
    if model.kind == ModelKind.SPARSE_GAUSSIAN:
        return (dim - model.s) / ((dim - 1) * math.sqrt(model.s))
    if model.kind == ModelKind.NONNEG_SPARSE_GAUSSIAN:
        lower = (2 * model.s - 1 - dim) / (dim - 1)
        return lower if lower >= 0.0 else 1.0

    def excess(mu: float) -> float:
        return dual_norm_constant(model, mu) - 1.0

    upper = 1.0 - 1e-12
    if excess(upper) < 0.0:
        return math.inf
    try:
        return float(optimize.brentq(excess, 0.0, upper, xtol=1e-14))
    except (ValueError, RuntimeError) as e:
        raise NumericError(f"root finding for the critical coherence failed: {e}") from e


def report(model: CoefficientModel, mu: float, dim: Optional[int] = None) -> IdentifiabilityReport:
    """
    Assemble dual norm, condition flag, sharpness bound and region radius for a
    constant-collinearity reference D*(mu).

    ||D*||_2^2 is computed numerically; its closed form 1 + mu (K - 1) is recorded in extras
    alongside the 1 - mu + mu (K - 1) variant.
    """
    dim = _resolve_dim(model, dim)
    dual = dual_norm_constant(model, mu, dim)
    norm_sq = spectral_norm_sq(constant_collinearity_dictionary(dim, mu))

    try:
        c_alpha = regularity_constant(model)
    except UnsupportedModelError:
        c_alpha = None
        logger.info(f"No regularity constant for {model.label}; sharpness and region bounds unavailable")

    sharpness = region = None
    if c_alpha is not None:
        sharpness = c_alpha / (math.sqrt(2.0) * norm_sq) * (1.0 - dual)
        region = (1.0 - dual) * c_alpha / (8.0 * math.sqrt(2.0) * norm_sq * expected_abs_coef(model))

    return IdentifiabilityReport(
        dual_norm=dual,
        is_sharp_condition=dual < 1.0,
        sharpness_lower_bound=sharpness,
        region_radius=region,
        regularity_constant=c_alpha,
        spectral_norm_sq=norm_sq,
        model=model.label,
        mu=float(mu),
        extras={
            "spectral_norm_sq_closed_form": 1.0 + mu * (dim - 1),
            "spectral_norm_sq_alt_form": 1.0 - mu + mu * (dim - 1),
        },
    )
