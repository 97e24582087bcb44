"""
Test Identifiability
Bias matrices, the alpha semi-norm, closed-form dual norms and the sharpness report
"""

import sys
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from src.coeff_models import SQRT_2_OVER_PI, CoefficientModel, sample_coefficients
from src.dictionary import collinearity, constant_collinearity_dictionary
from src.errors import CapacityError, ParameterError, ShapeError, UnsupportedModelError
from src.identifiability import (
    bg_dual_norm_approximation,
    bias_matrix_closed_form,
    bias_matrix_empirical,
    critical_coherence,
    dual_norm_constant,
    laplace_integral,
    laplace_integral_closed_form,
    region_bound,
    regularity_constant,
    report,
    seminorm_closed_form_sg,
    seminorm_empirical,
    sharpness_bound,
)


def _off_diagonal(rng, dim):
    a = rng.standard_normal((dim, dim))
    np.fill_diagonal(a, 0.0)
    return a


# ---------------------------------------------------------------------------------------------
# Bias matrix
# ---------------------------------------------------------------------------------------------

def test_single_basis_sample_has_zero_bias():
    coeffs = np.array([[1.0, 0.0, 0.0]])
    b = bias_matrix_empirical(coeffs, np.eye(3)).b
    assert np.allclose(b, 0.0)


def test_independent_symmetric_coordinates_have_small_bias():
    n = 100_000
    coeffs = sample_coefficients(CoefficientModel.sparse_gaussian(4, 2), n, seed=31)
    b = bias_matrix_empirical(coeffs, np.eye(4)).b
    assert np.all(np.abs(b) < 4.0 / math.sqrt(n))


def test_empirical_bias_matches_closed_form_for_sg():
    dim, s, mu = 5, 2, 0.3
    model = CoefficientModel.sparse_gaussian(dim, s)
    coeffs = sample_coefficients(model, 100_000, seed=37)
    empirical = bias_matrix_empirical(coeffs, collinearity(constant_collinearity_dictionary(dim, mu))).b
    closed = bias_matrix_closed_form(model, mu).b
    off = ~np.eye(dim, dtype=bool)
    assert np.all(np.abs(empirical[off] - closed[off]) < 0.02)
    assert abs(empirical[off].mean() - (-SQRT_2_OVER_PI * mu * s / dim)) < 0.005


def test_bias_matrix_shape_mismatch():
    with pytest.raises(ShapeError):
        bias_matrix_empirical(np.ones((3, 2)), np.eye(3))


def test_closed_form_bias_examples():
    assert np.allclose(bias_matrix_closed_form(CoefficientModel.sparse_gaussian(6, 2), 0.0).b, 0.0)

    dim, s = 10, 4
    nonneg = bias_matrix_closed_form(CoefficientModel.nonneg_sparse_gaussian(dim, s), (s - 1) / (dim - 1)).b
    assert np.allclose(nonneg, 0.0, atol=1e-15)

    bg = bias_matrix_closed_form(CoefficientModel.bernoulli_gaussian(4, 0.7), 0.5).b
    assert bg[0, 1] == pytest.approx(-0.27926, abs=1e-5)
    assert np.all(np.diag(bg) == 0.0)


# ---------------------------------------------------------------------------------------------
# Semi-norm
# ---------------------------------------------------------------------------------------------

def test_seminorm_vanishes_on_diagonal_and_zero():
    coeffs = sample_coefficients(CoefficientModel.sparse_gaussian(4, 2), 1_000, seed=3)
    diagonal = np.diag([1.0, -2.0, 3.0, 0.5])
    assert seminorm_empirical(diagonal, coeffs) == 0.0
    assert seminorm_empirical(np.zeros((4, 4)), coeffs) == 0.0
    assert seminorm_closed_form_sg(diagonal, 2, 4) == 0.0


def test_seminorm_closed_form_two_dimensional_example():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert seminorm_closed_form_sg(a, 1, 2) == pytest.approx(SQRT_2_OVER_PI)


def test_seminorm_empirical_converges_to_closed_form():
    dim, s = 6, 2
    a = np.ones((dim, dim)) - np.eye(dim)
    coeffs = sample_coefficients(CoefficientModel.sparse_gaussian(dim, s), 200_000, seed=41)
    assert seminorm_empirical(a, coeffs) == pytest.approx(seminorm_closed_form_sg(a, s, dim), rel=0.01)


@pytest.mark.slow
def test_seminorm_matches_closed_form_for_random_matrices():
    dim, s = 6, 2
    coeffs = sample_coefficients(CoefficientModel.sparse_gaussian(dim, s), 1_000_000, seed=43)
    rng = np.random.default_rng(44)
    for _ in range(20):
        a = _off_diagonal(rng, dim)
        assert seminorm_empirical(a, coeffs) == pytest.approx(seminorm_closed_form_sg(a, s, dim), rel=0.02)


def test_seminorm_capacity_guard():
    with pytest.raises(CapacityError):
        seminorm_closed_form_sg(np.zeros((40, 40)), 10, 40)


@given(seed=st.integers(min_value=0, max_value=10_000), scale=st.floats(min_value=-5.0, max_value=5.0))
@settings(max_examples=30, deadline=None)
def test_seminorm_axioms(seed, scale):
    dim, s = 5, 2
    rng = np.random.default_rng(seed)
    a, b = _off_diagonal(rng, dim), _off_diagonal(rng, dim)
    fa = seminorm_closed_form_sg(a, s, dim)
    fb = seminorm_closed_form_sg(b, s, dim)
    assert seminorm_closed_form_sg(a + b, s, dim) <= fa + fb + 1e-12
    assert seminorm_closed_form_sg(scale * a, s, dim) == pytest.approx(abs(scale) * fa, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("dim, s", [(4, 1), (5, 2), (6, 3), (7, 2)])
def test_regularity_inequality(dim, s):
    rng = np.random.default_rng(dim * 100 + s)
    c_alpha = regularity_constant(CoefficientModel.sparse_gaussian(dim, s))
    for _ in range(250):
        a = _off_diagonal(rng, dim)
        assert seminorm_closed_form_sg(a, s, dim) >= c_alpha * np.linalg.norm(a) - 1e-12


# ---------------------------------------------------------------------------------------------
# Laplace constant
# ---------------------------------------------------------------------------------------------

def test_laplace_integral_small_values():
    assert laplace_integral(1) == pytest.approx(1.0, abs=1e-8)
    assert laplace_integral(2) == pytest.approx(1.5, abs=1e-8)


@pytest.mark.parametrize("s", [1, 2, 3, 4, 5, 6])
def test_laplace_integral_matches_closed_form(s):
    assert laplace_integral(s) == pytest.approx(laplace_integral_closed_form(s), abs=1e-8)


def test_laplace_integral_is_increasing():
    values = [laplace_integral(s) for s in range(1, 7)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_laplace_integral_monte_carlo():
    rng = np.random.default_rng(5)
    samples = np.abs(rng.gamma(2.0, size=1_000_000) - rng.gamma(2.0, size=1_000_000))
    stderr = samples.std() / math.sqrt(samples.size)
    assert abs(samples.mean() - laplace_integral(2)) < 4 * stderr


def test_laplace_integral_rejects_bad_order():
    with pytest.raises(ParameterError):
        laplace_integral(0)


# ---------------------------------------------------------------------------------------------
# Dual norms and constants
# ---------------------------------------------------------------------------------------------

def test_dual_norm_examples():
    assert dual_norm_constant(CoefficientModel.sparse_gaussian(20, 5), 0.0) == 0.0
    assert dual_norm_constant(CoefficientModel.sparse_gaussian(20, 5), 0.1) == pytest.approx(0.28324, abs=1e-5)
    assert dual_norm_constant(CoefficientModel.sparse_laplacian(10, 1), 0.3) == pytest.approx(0.3, rel=1e-8)
    assert dual_norm_constant(CoefficientModel.nonneg_sparse_gaussian(20, 10), 0.6) == pytest.approx(0.24, abs=1e-12)


def test_dual_norm_errors():
    with pytest.raises(ParameterError):
        dual_norm_constant(CoefficientModel.sparse_gaussian(5, 5), 0.1)
    with pytest.raises(UnsupportedModelError):
        dual_norm_constant(CoefficientModel.bernoulli_type([0.2, 0.3]), 0.1)
    with pytest.raises(ParameterError):
        dual_norm_constant(CoefficientModel.sparse_gaussian(5, 2), 0.1, dim=6)


def test_sg_condition_matches_coherence_boundary():
    for dim in (5, 10, 20):
        for s in range(1, dim):
            for mu in np.linspace(0.0, 0.95, 20):
                boundary = (dim - s) / (dim - 1)
                if abs(mu * math.sqrt(s) - boundary) < 1e-9:
                    continue
                sharp = dual_norm_constant(CoefficientModel.sparse_gaussian(dim, s), mu) < 1.0
                assert sharp == (mu * math.sqrt(s) < boundary)


@pytest.mark.parametrize("dim", [2, 5, 10, 30])
@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.8])
def test_bg_exact_dual_norm_dominates_simplified_form(dim, p):
    mu = 0.2
    exact = dual_norm_constant(CoefficientModel.bernoulli_gaussian(dim, p), mu)
    assert exact >= bg_dual_norm_approximation(mu, p, dim) - 1e-12


def test_regularity_constant_values():
    assert regularity_constant(CoefficientModel.sparse_gaussian(8, 8)) == 0.0
    assert regularity_constant(CoefficientModel.sparse_gaussian(20, 10)) == pytest.approx(0.20997, abs=1e-5)
    assert regularity_constant(CoefficientModel.bernoulli_gaussian(6, 0.5)) == pytest.approx(0.19947, abs=1e-5)
    with pytest.raises(UnsupportedModelError):
        regularity_constant(CoefficientModel.nonneg_sparse_gaussian(10, 3))


def test_critical_coherence():
    sg = CoefficientModel.sparse_gaussian(20, 5)
    assert critical_coherence(sg) == pytest.approx(15 / (19 * math.sqrt(5)))

    sl = CoefficientModel.sparse_laplacian(10, 2)
    assert critical_coherence(sl) == pytest.approx(2.0 / 3.0, abs=1e-8)

    bg = CoefficientModel.bernoulli_gaussian(10, 0.3)
    mu_c = critical_coherence(bg)
    assert 0.0 < mu_c < 1.0
    assert dual_norm_constant(bg, mu_c) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------------------------

def test_report_at_boundary():
    dim, s = 20, 5
    mu = (dim - s) / ((dim - 1) * math.sqrt(s))
    result = report(CoefficientModel.sparse_gaussian(dim, s), mu)
    assert result.dual_norm == pytest.approx(1.0, abs=1e-12)
    assert result.sharpness_lower_bound == pytest.approx(0.0, abs=1e-12)


def test_report_sharp_sg():
    model = CoefficientModel.sparse_gaussian(20, 5)
    result = report(model, 0.1)
    assert result.is_sharp_condition
    assert result.spectral_norm_sq == pytest.approx(1.0 + 0.1 * 19)
    assert result.sharpness_lower_bound == pytest.approx(sharpness_bound(model, 0.1))
    assert result.region_radius == pytest.approx(region_bound(model, 0.1))
    assert result.sharpness_lower_bound > 0.0

    document = result.to_json()
    for key in ("dual_norm", "condition", "sharpness", "region_radius", "c_alpha"):
        assert key in document


def test_report_without_regularity_constant():
    result = report(CoefficientModel.nonneg_sparse_gaussian(20, 10), 0.6)
    assert result.dual_norm == pytest.approx(0.24, abs=1e-12)
    assert result.is_sharp_condition
    assert not result.bounds_available
    assert result.to_json()["sharpness"] == "unavailable"
    assert result.to_json()["c_alpha"] == "unavailable"
