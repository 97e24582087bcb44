"""
Dictionary Module
Feasible complete dictionaries (square, full rank, unit-norm columns), collinearity algebra,
the l1 objective and the sign-permutation invariant NMSE metric.
"""

import math
import logging
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment

from .errors import NormalizationError, ParameterError, RankError, ShapeError
from .rng import make_generator
from .utils import load_matrix_csv, save_matrix_csv

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-10
RANK_RATIO = 1e-12

# Columns already this close to unit norm are left untouched so normalization is idempotent
_RENORMALIZE_TOL = 1e-14

_DICT_STREAM = 0x64696374


class Dictionary:
    """
    Immutable K x K dictionary with unit-norm columns and full rank.

    The inverse is computed on first use and cached behind a lock, so a Dictionary can be
    shared between threads.
    """

    def __init__(self, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"dictionary must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ParameterError("dictionary contains non-finite entries")

        norms = np.linalg.norm(matrix, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise NormalizationError(f"columns are not unit norm (max deviation {np.max(np.abs(norms - 1.0)):.3e})")

        singular_values = np.linalg.svd(matrix, compute_uv=False)
        if singular_values[-1] <= RANK_RATIO * singular_values[0]:
            raise RankError(f"dictionary is rank deficient (sigma_min/sigma_max = {singular_values[-1] / singular_values[0]:.3e})")

        matrix.setflags(write=False)
        self._matrix = matrix
        self._inverse: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        if self._inverse is None:
            with self._lock:
                if self._inverse is None:
                    inv = np.linalg.inv(self._matrix)
                    inv.setflags(write=False)
                    self._inverse = inv
        return self._inverse

    def coefficients(self, signals: np.ndarray) -> np.ndarray:
        """Row-wise coefficients beta_i = D^-1 y_i of an n x K signal matrix."""
        signals = np.atleast_2d(np.asarray(signals, dtype=float))
        if signals.shape[1] != self.dim:
            raise ShapeError(f"signals have dimension {signals.shape[1]}, dictionary has {self.dim}")
        return signals @ self.inverse.T

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dictionary):
            return NotImplemented
        return np.array_equal(self._matrix, other._matrix)

    def __hash__(self):
        return hash(self._matrix.tobytes())

    def __repr__(self) -> str:
        return f"Dictionary(K={self.dim})"

    def __getstate__(self):
        return {"matrix": self._matrix}

    def __setstate__(self, state):
        matrix = np.array(state["matrix"], dtype=float)
        matrix.setflags(write=False)
        self._matrix = matrix
        self._inverse = None
        self._lock = threading.Lock()


@dataclass(frozen=True)
class CollinearityMatrix:
    """Gram matrix M = D^T D of a dictionary (unit diagonal, symmetric)."""
    m: np.ndarray

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    @property
    def coherence(self) -> float:
        if self.dim < 2:
            return 0.0
        off = self.m[~np.eye(self.dim, dtype=bool)]
        return float(np.max(np.abs(off)))


def make_dictionary(matrix) -> Dictionary:
    """
    Normalize the columns of a square matrix and validate it as a feasible dictionary.

    Raises:
        ShapeError: non-square input
        NormalizationError: a zero column
        RankError: singular input
    """
    if isinstance(matrix, Dictionary):
        return matrix
    matrix = np.array(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"dictionary must be square, got shape {matrix.shape}")

    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise NormalizationError("cannot normalize a zero or non-finite column")
    rescale = np.abs(norms - 1.0) > _RENORMALIZE_TOL
    matrix[:, rescale] = matrix[:, rescale] / norms[rescale]
    return Dictionary(matrix)


def constant_collinearity_dictionary(dim: int, mu: float) -> Dictionary:
    """
    Symmetric PSD square root of (1 - mu) I + mu 11^T.

    Its Gram matrix has every off-diagonal entry equal to mu. The spectral norm squared is
    1 + mu (K - 1), the largest Gram eigenvalue.
    """
    if dim < 1:
        raise ParameterError(f"dimension must be positive, got {dim}")
    lower = -1.0 / (dim - 1) if dim > 1 else -math.inf
    if not (lower < mu < 1.0):
        raise ParameterError(f"mu must lie in ({lower}, 1) for K={dim}, got {mu}")

    gram = (1.0 - mu) * np.eye(dim) + mu * np.ones((dim, dim))
    eigvals, eigvecs = eigh(gram)
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    root = 0.5 * (root + root.T)
    return make_dictionary(root)


def random_gaussian_dictionary(dim: int, seed: int) -> Dictionary:
    """i.i.d. standard Gaussian entries with normalized columns."""
    if dim < 1:
        raise ParameterError(f"dimension must be positive, got {dim}")
    rng = make_generator(seed, _DICT_STREAM)
    return make_dictionary(rng.standard_normal((dim, dim)))


def rotation_dictionary(theta1: float, theta2: float) -> Dictionary:
    """Two-dimensional dictionary with atoms (cos theta_i, sin theta_i)."""
    return make_dictionary(np.array([
        [math.cos(theta1), math.cos(theta2)],
        [math.sin(theta1), math.sin(theta2)],
    ]))


def collinearity(dictionary: Dictionary) -> CollinearityMatrix:
    d = dictionary.matrix
    m = d.T @ d
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return CollinearityMatrix(m)


def max_coherence(dictionary: Dictionary) -> float:
    return collinearity(dictionary).coherence


def spectral_norm_sq(dictionary: Dictionary) -> float:
    return float(np.linalg.norm(dictionary.matrix, 2) ** 2)


def nmse(estimate: Dictionary, reference: Dictionary) -> float:
    """
    min over signed permutations J of ||D_hat J - D*||_F^2 / ||D*||_F^2.

    Matching column i to column j with the best sign costs 2 - 2|<D_hat_i, D*_j>|, so the
    minimum is a linear assignment problem.
    """
    if estimate.dim != reference.dim:
        raise ShapeError(f"dimension mismatch: {estimate.dim} vs {reference.dim}")
    cost = 2.0 - 2.0 * np.abs(estimate.matrix.T @ reference.matrix)
    rows, cols = linear_sum_assignment(cost)
    return max(0.0, float(cost[rows, cols].sum()) / reference.dim)


def l1_objective(dictionary: Dictionary, signals: np.ndarray) -> float:
    """L(D) = (1/n) sum_i ||D^-1 y_i||_1."""
    beta = dictionary.coefficients(signals)
    return float(np.abs(beta).sum() / beta.shape[0])


def save_dictionary(dictionary: Dictionary, output_path: str) -> None:
    save_matrix_csv(dictionary.matrix, output_path)
    logger.info(f"Dictionary (K={dictionary.dim}) saved to: {output_path}")


def load_dictionary(input_path: str) -> Dictionary:
    return make_dictionary(load_matrix_csv(input_path))
