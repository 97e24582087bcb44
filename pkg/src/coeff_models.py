"""
Coefficient Models
Reference coefficient generators (sparse/Bernoulli Gaussian, non-negative, Laplacian and the
generic Bernoulli-type / exact-sparse families) and noisy signal generation y = D* alpha + eps.
"""

from __future__ import annotations

import math
import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from .dictionary import Dictionary
from .errors import ParameterError, ShapeError, UnsupportedModelError
from .rng import DEFAULT_BLOCK_SIZE, make_generator, row_blocks
from .utils import load_matrix_csv, load_metadata, save_matrix_csv, save_metadata

logger = logging.getLogger(__name__)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# Stream tags keep coefficient and noise draws independent for a shared seed
_COEF_STREAM = 0x636F6566
_NOISE_STREAM = 0x6E6F6973
_COUNTER_STREAM = 0x63657870

DEFAULT_CALIBRATION_SAMPLES = 10_000
DEFAULT_CALIBRATION_SUBSEED = 977

# Counter-example mixture: equal weights, Bernoulli(0.67) activity per coordinate
COUNTEREXAMPLE_ACTIVE_PROB = 0.67
COUNTEREXAMPLE_COVARIANCES = (
    np.array([[101.0, -99.0], [-99.0, 101.0]]),
    np.array([[101.0, 99.0], [99.0, 101.0]]),
)


class ModelKind(str, Enum):
    SPARSE_GAUSSIAN = "sg"
    BERNOULLI_GAUSSIAN = "bg"
    NONNEG_SPARSE_GAUSSIAN = "abs_sg"
    SPARSE_LAPLACIAN = "sl"
    BERNOULLI_TYPE = "bernoulli_type"
    EXACT_SPARSE = "exact_sparse"


# Base samplers must have absolutely continuous marginals
BASE_SAMPLERS: Dict[str, Callable[[np.random.Generator, Tuple[int, int]], np.ndarray]] = {
    "gaussian": lambda rng, shape: rng.standard_normal(shape),
    "laplace": lambda rng, shape: rng.laplace(0.0, 1.0, shape),
    "abs_gaussian": lambda rng, shape: np.abs(rng.standard_normal(shape)),
    "gamma": lambda rng, shape: rng.gamma(2.0, 1.0, shape),
    "uniform": lambda rng, shape: rng.uniform(-1.0, 1.0, shape),
}

_KIND_BASE = {
    ModelKind.SPARSE_GAUSSIAN: "gaussian",
    ModelKind.BERNOULLI_GAUSSIAN: "gaussian",
    ModelKind.NONNEG_SPARSE_GAUSSIAN: "abs_gaussian",
    ModelKind.SPARSE_LAPLACIAN: "laplace",
}

_EXACT_SPARSE_KINDS = {
    ModelKind.SPARSE_GAUSSIAN,
    ModelKind.NONNEG_SPARSE_GAUSSIAN,
    ModelKind.SPARSE_LAPLACIAN,
    ModelKind.EXACT_SPARSE,
}


@dataclass(frozen=True)
class CoefficientModel:
    """
    Tagged description of a coefficient distribution alpha_j = xi_j * z_j.

    Exact-sparse kinds draw the support xi as a uniform size-s subset; Bernoulli kinds draw
    independent xi_j ~ Bernoulli(p_j).
    """
    kind: ModelKind
    dim: int
    s: Optional[int] = None
    p: Optional[float] = None
    probabilities: Optional[Tuple[float, ...]] = None
    base: str = "gaussian"

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError(f"dimension must be positive, got {self.dim}")
        if self.kind in _KIND_BASE:
            object.__setattr__(self, "base", _KIND_BASE[self.kind])
        if self.base not in BASE_SAMPLERS:
            raise ParameterError(f"unknown base sampler '{self.base}'")

        if self.kind in _EXACT_SPARSE_KINDS:
            if self.s is None or not (1 <= int(self.s) <= self.dim):
                raise ParameterError(f"sparsity s must satisfy 1 <= s <= K={self.dim}, got {self.s}")
        elif self.kind == ModelKind.BERNOULLI_GAUSSIAN:
            if self.p is None or not (0.0 < float(self.p) < 1.0):
                raise ParameterError(f"probability p must lie in (0, 1), got {self.p}")
        elif self.kind == ModelKind.BERNOULLI_TYPE:
            probs = self.probabilities
            if probs is None or len(probs) != self.dim:
                raise ParameterError("Bernoulli-type model needs one probability per coordinate")
            if not all(0.0 < float(q) < 1.0 for q in probs):
                raise ParameterError(f"all probabilities must lie in (0, 1), got {probs}")

    # -- constructors -----------------------------------------------------------------
    @classmethod
    def sparse_gaussian(cls, dim: int, s: int) -> "CoefficientModel":
        return cls(ModelKind.SPARSE_GAUSSIAN, dim, s=s)

    @classmethod
    def bernoulli_gaussian(cls, dim: int, p: float) -> "CoefficientModel":
        return cls(ModelKind.BERNOULLI_GAUSSIAN, dim, p=p)

    @classmethod
    def nonneg_sparse_gaussian(cls, dim: int, s: int) -> "CoefficientModel":
        return cls(ModelKind.NONNEG_SPARSE_GAUSSIAN, dim, s=s)

    @classmethod
    def sparse_laplacian(cls, dim: int, s: int) -> "CoefficientModel":
        return cls(ModelKind.SPARSE_LAPLACIAN, dim, s=s)

    @classmethod
    def bernoulli_type(cls, probabilities, base: str = "gaussian") -> "CoefficientModel":
        probs = tuple(float(q) for q in probabilities)
        return cls(ModelKind.BERNOULLI_TYPE, len(probs), probabilities=probs, base=base)

    @classmethod
    def exact_sparse(cls, dim: int, s: int, base: str = "gaussian") -> "CoefficientModel":
        return cls(ModelKind.EXACT_SPARSE, dim, s=s, base=base)

    @classmethod
    def from_name(cls, name: str, dim: int, s: Optional[int] = None, p: Optional[float] = None) -> "CoefficientModel":
        """Build a closed-form model from a short CLI name (sg, bg, abs_sg, sl)."""
        kind = ModelKind(name.lower())
        if kind == ModelKind.BERNOULLI_GAUSSIAN:
            return cls.bernoulli_gaussian(dim, p)
        if kind in _KIND_BASE:
            return cls(kind, dim, s=s)
        raise ParameterError(f"model '{name}' needs explicit parameters; use the constructors")

    # -- properties -------------------------------------------------------------------
    @property
    def is_exact_sparse(self) -> bool:
        return self.kind in _EXACT_SPARSE_KINDS

    @property
    def label(self) -> str:
        if self.kind == ModelKind.BERNOULLI_GAUSSIAN:
            return f"BG(p={self.p})"
        if self.kind == ModelKind.BERNOULLI_TYPE:
            return f"B(p1..pK, base={self.base})"
        names = {
            ModelKind.SPARSE_GAUSSIAN: "SG",
            ModelKind.NONNEG_SPARSE_GAUSSIAN: "|SG|",
            ModelKind.SPARSE_LAPLACIAN: "SL",
            ModelKind.EXACT_SPARSE: f"S[{self.base}]",
        }
        return f"{names[self.kind]}(s={self.s})"

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "dim": self.dim,
            "s": self.s,
            "p": self.p,
            "probabilities": list(self.probabilities) if self.probabilities else None,
            "base": self.base,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CoefficientModel":
        probs = data.get("probabilities")
        return cls(
            ModelKind(data["kind"]),
            int(data["dim"]),
            s=data.get("s"),
            p=data.get("p"),
            probabilities=tuple(probs) if probs else None,
            base=data.get("base", "gaussian"),
        )


@dataclass
class SignalSet:
    """n signals y_i = D* alpha_i + eps_i stored row-wise with their generating metadata."""
    signals: np.ndarray
    coefficients: Optional[np.ndarray]
    seed: int
    snr: float
    model: Optional[CoefficientModel] = None
    noise_std: float = 0.0
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.signals = np.atleast_2d(np.asarray(self.signals, dtype=float))
        if self.signals.shape[0] < 1:
            raise ShapeError("a signal set needs at least one signal")
        if self.coefficients is not None and self.coefficients.shape != self.signals.shape:
            raise ShapeError(f"coefficients {self.coefficients.shape} do not match signals {self.signals.shape}")

    @property
    def n(self) -> int:
        return self.signals.shape[0]

    @property
    def dim(self) -> int:
        return self.signals.shape[1]


@dataclass(frozen=True)
class SamplingConfig:
    """Row-block size of the keyed streams and the fixed draw used for SNR calibration."""
    block_size: int = DEFAULT_BLOCK_SIZE
    calibration_samples: int = DEFAULT_CALIBRATION_SAMPLES
    calibration_subseed: int = DEFAULT_CALIBRATION_SUBSEED

    def __post_init__(self):
        if int(self.block_size) < 1:
            raise ParameterError(f"block_size must be at least 1, got {self.block_size}")
        if int(self.calibration_samples) < 1:
            raise ParameterError(f"calibration_samples must be at least 1, got {self.calibration_samples}")

    @classmethod
    def from_config(cls, config: Dict, **overrides) -> "SamplingConfig":
        """Build from the 'sampling' section of a config dict; non-None overrides win."""
        section = dict(config.get('sampling', {}) or {})
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in section.items() if k in known})

    def coefficients(self, model: CoefficientModel, n: int, seed: int) -> np.ndarray:
        return sample_coefficients(model, n, seed, block_size=self.block_size)

    def signals(
        self,
        dictionary: Dictionary,
        coeffs: np.ndarray,
        snr: float,
        seed: int,
        model: Optional[CoefficientModel] = None
    ) -> SignalSet:
        return generate_signals(
            dictionary, coeffs, snr, seed, model=model,
            calibration_samples=self.calibration_samples,
            calibration_subseed=self.calibration_subseed,
            block_size=self.block_size,
        )


def _support_mask(rng: np.random.Generator, rows: int, dim: int, s: int) -> np.ndarray:
    """Uniform size-s supports via a vectorized partial Fisher-Yates shuffle."""
    idx = np.tile(np.arange(dim), (rows, 1))
    r = np.arange(rows)
    for i in range(s):
        j = i + rng.integers(0, dim - i, size=rows)
        chosen = idx[r, j].copy()
        idx[r, j] = idx[r, i]
        idx[r, i] = chosen
    mask = np.zeros((rows, dim), dtype=bool)
    mask[r[:, None], idx[:, :s]] = True
    return mask


def _activity_mask(rng: np.random.Generator, rows: int, model: CoefficientModel) -> np.ndarray:
    if model.is_exact_sparse:
        return _support_mask(rng, rows, model.dim, int(model.s))
    if model.kind == ModelKind.BERNOULLI_GAUSSIAN:
        probs = np.full(model.dim, float(model.p))
    else:
        probs = np.asarray(model.probabilities, dtype=float)
    return rng.random((rows, model.dim)) < probs


def sample_coefficients(
    model: CoefficientModel,
    n: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE
) -> np.ndarray:
    """
    Draw n i.i.d. coefficient vectors from model.

    Rows are generated in fixed-size blocks, each from its own Philox stream keyed by
    (seed, block index), so the output is identical whether blocks are produced in order or
    in parallel.

    Args:
        model: Coefficient distribution
        n: Number of rows
        seed: Master seed
        block_size: Rows per keyed block

    Returns:
        n x K coefficient matrix with exact zeros off the support
    """
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    sampler = BASE_SAMPLERS[model.base]
    out = np.zeros((n, model.dim))
    for b, start, stop in row_blocks(n, block_size):
        rng = make_generator(seed, _COEF_STREAM, b)
        rows = stop - start
        mask = _activity_mask(rng, rows, model)
        z = sampler(rng, (rows, model.dim))
        out[start:stop] = np.where(mask, z, 0.0)
    return out


def expected_abs_coef(model: CoefficientModel) -> float:
    """
    max_j E|alpha_j| for the closed-form models (all coordinates are exchangeable).

    SG and |SG|: sqrt(2/pi) s/K; BG: p sqrt(2/pi); SL: s/K.
    """
    if model.kind in (ModelKind.SPARSE_GAUSSIAN, ModelKind.NONNEG_SPARSE_GAUSSIAN):
        return SQRT_2_OVER_PI * model.s / model.dim
    if model.kind == ModelKind.BERNOULLI_GAUSSIAN:
        return float(model.p) * SQRT_2_OVER_PI
    if model.kind == ModelKind.SPARSE_LAPLACIAN:
        return model.s / model.dim
    raise UnsupportedModelError(f"no closed-form E|alpha_j| for {model.label}")


def _expected_noise_norm_unit(dim: int) -> float:
    """E||eps||_2 for eps ~ N(0, I_dim) (mean of the chi distribution)."""
    return math.sqrt(2.0) * math.exp(gammaln((dim + 1) / 2.0) - gammaln(dim / 2.0))


def generate_signals(
    dictionary: Dictionary,
    coeffs: np.ndarray,
    snr: float,
    seed: int,
    model: Optional[CoefficientModel] = None,
    calibration_samples: int = DEFAULT_CALIBRATION_SAMPLES,
    calibration_subseed: int = DEFAULT_CALIBRATION_SUBSEED,
    block_size: int = DEFAULT_BLOCK_SIZE
) -> SignalSet:
    """
    Form y_i = D* alpha_i + eps_i with isotropic Gaussian noise.

    The noise standard deviation makes E||D* alpha|| / E||eps|| equal snr. E||D* alpha|| is a
    Monte-Carlo estimate over calibration_samples draws of model when the model is known,
    otherwise the mean over the supplied coefficient rows. The calibration draws are seeded by
    calibration_subseed alone, so the noise level depends on (dictionary, model, snr) and never
    on seed.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if coeffs.shape[1] != dictionary.dim:
        raise ShapeError(f"coefficients have {coeffs.shape[1]} columns, dictionary has dimension {dictionary.dim}")
    if not snr > 0:
        raise ParameterError(f"snr must be positive, got {snr}")

    clean = coeffs @ dictionary.matrix.T
    if math.isinf(snr):
        return SignalSet(clean, coeffs, seed, snr, model=model, noise_std=0.0)

    if model is not None:
        calib = sample_coefficients(model, calibration_samples, calibration_subseed, block_size)
        mean_norm = float(np.mean(np.linalg.norm(calib @ dictionary.matrix.T, axis=1)))
    else:
        mean_norm = float(np.mean(np.linalg.norm(clean, axis=1)))
    if mean_norm <= 0.0:
        raise ParameterError("cannot calibrate the noise level: zero signal energy and no model given")

    sigma = mean_norm / (snr * _expected_noise_norm_unit(dictionary.dim))
    signals = clean.copy()
    for b, start, stop in row_blocks(coeffs.shape[0], block_size):
        rng = make_generator(seed, _NOISE_STREAM, b)
        signals[start:stop] += sigma * rng.standard_normal((stop - start, dictionary.dim))

    logger.debug(f"Generated {coeffs.shape[0]} signals at snr={snr} (noise std {sigma:.3e})")
    return SignalSet(signals, coeffs, seed, snr, model=model, noise_std=sigma)


def sample_counterexample(n: int, seed: int) -> np.ndarray:
    """
    Two-dimensional Bernoulli-type model whose reference (identity) dictionary is a sharp
    local minimum but not the global minimum of the l1 objective.

    alpha_i = xi_i z_i with xi_i ~ Bernoulli(0.67) and z an equal-weight mixture of centered
    Gaussians with covariances [[101, -99], [-99, 101]] and [[101, 99], [99, 101]].
    """
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    chol = [np.linalg.cholesky(c) for c in COUNTEREXAMPLE_COVARIANCES]
    out = np.zeros((n, 2))
    for b, start, stop in row_blocks(n, DEFAULT_BLOCK_SIZE):
        rng = make_generator(seed, _COUNTER_STREAM, b)
        rows = stop - start
        component = rng.random(rows) < 0.5
        g = rng.standard_normal((rows, 2))
        z = np.where(component[:, None], g @ chol[0].T, g @ chol[1].T)
        active = rng.random((rows, 2)) < COUNTEREXAMPLE_ACTIVE_PROB
        out[start:stop] = np.where(active, z, 0.0)
    return out


def save_signal_set(signal_set: SignalSet, output_prefix: str, include_coefficients: bool = True) -> Dict[str, str]:
    """
    Write signals (headerless CSV), optional coefficients CSV and a JSON sidecar.

    Returns:
        Mapping of artifact name to written path
    """
    prefix = Path(output_prefix)
    paths = {
        "signals": str(prefix.with_suffix(".signals.csv")),
        "metadata": str(prefix.with_suffix(".json")),
    }
    save_matrix_csv(signal_set.signals, paths["signals"])
    if include_coefficients and signal_set.coefficients is not None:
        paths["coefficients"] = str(prefix.with_suffix(".coefficients.csv"))
        save_matrix_csv(signal_set.coefficients, paths["coefficients"])

    save_metadata({
        "seed": signal_set.seed,
        "snr": signal_set.snr,
        "noise_std": signal_set.noise_std,
        "n": signal_set.n,
        "dim": signal_set.dim,
        "model": signal_set.model.to_dict() if signal_set.model else None,
        **signal_set.metadata,
    }, paths["metadata"])
    return paths


def load_signal_set(output_prefix: str) -> SignalSet:
    """Read back a signal set written by save_signal_set."""
    prefix = Path(output_prefix)
    meta = load_metadata(str(prefix.with_suffix(".json")))
    signals = load_matrix_csv(str(prefix.with_suffix(".signals.csv")))
    coef_path = prefix.with_suffix(".coefficients.csv")
    coeffs = load_matrix_csv(str(coef_path)) if coef_path.exists() else None
    model = CoefficientModel.from_dict(meta["model"]) if meta.get("model") else None
    return SignalSet(signals, coeffs, int(meta.get("seed", 0)), float(meta.get("snr", math.inf)),
                     model=model, noise_std=float(meta.get("noise_std", 0.0)))
