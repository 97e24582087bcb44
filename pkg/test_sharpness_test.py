"""
Test Sharpness Test
Collinearity perturbation and sharp / not-sharp verdicts on constant-collinearity references
"""

import sys
import math
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.coeff_models import CoefficientModel, generate_signals, sample_coefficients
from src.dictionary import collinearity, constant_collinearity_dictionary, make_dictionary, nmse, random_gaussian_dictionary
from src.errors import ParameterError, SolverError
from src.sharpness_test import SharpTestConfig, perturb_gram, sharp_test
from src.subproblem_solver import SolverConfig


def _signals(dim, s, mu, n, seed):
    reference = constant_collinearity_dictionary(dim, mu)
    model = CoefficientModel.sparse_gaussian(dim, s)
    signal_set = generate_signals(reference, sample_coefficients(model, n, seed=seed), math.inf, seed=seed)
    return reference, signal_set


def _boundary_mu(dim, s, offset):
    return ((dim - s) / (dim - 1) + offset) / math.sqrt(s)


def test_perturb_gram_is_deterministic_and_symmetric():
    d = constant_collinearity_dictionary(6, 0.2)
    a = perturb_gram(d, 0.05, seed=3)
    b = perturb_gram(d, 0.05, seed=3)
    assert np.array_equal(a, b)
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 1.0)
    assert np.all(np.abs(a) <= 1.0)


def test_tiny_perturbation_recovers_gram():
    d = constant_collinearity_dictionary(8, 0.3)
    gram = perturb_gram(d, 1e-12, seed=1)
    assert np.max(np.abs(gram - collinearity(d).m)) < 1e-4


def test_perturbation_scale_is_independent_of_dimension():
    rho = 0.1
    for dim in (5, 20, 50):
        identity = make_dictionary(np.eye(dim))
        upper = np.triu_indices(dim, 1)
        deviations = np.concatenate([perturb_gram(identity, rho, seed=seed)[upper] for seed in range(40)])
        expected = rho * math.sqrt(2.0 / dim) * math.sqrt(1.0 + rho ** 2 / 2.0)
        assert np.sqrt(np.mean(deviations ** 2)) == pytest.approx(expected, rel=0.2)
        assert np.max(np.abs(deviations)) < 6.0 * expected


def test_perturbation_is_unbiased_for_orthogonal_pair():
    identity = make_dictionary(np.eye(2))
    values = np.array([perturb_gram(identity, 0.1, seed=seed)[0, 1] for seed in range(10_000)])
    stderr = values.std() / math.sqrt(values.size)
    assert abs(values.mean()) < 4 * stderr


def test_config_validation():
    with pytest.raises(ParameterError):
        SharpTestConfig(rho=0.0)
    with pytest.raises(ParameterError):
        SharpTestConfig(threshold=-1.0)
    with pytest.raises(ParameterError):
        perturb_gram(make_dictionary(np.eye(2)), -0.1, seed=0)


def test_config_from_dict():
    cfg = SharpTestConfig.from_config({'sharp_test': {'rho': 0.2, 'seed': 5}, 'solver': {'max_iter': 40}}, seed=7)
    assert cfg.rho == 0.2
    assert cfg.seed == 7
    assert cfg.solver.max_iter == 40


def test_sharp_configuration_is_sharp():
    reference, signal_set = _signals(10, 3, 0.1, 3_000, seed=11)
    result = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-4, seed=2))
    assert result.is_sharp
    assert result.r < 1e-6
    assert result.r == pytest.approx(float(result.per_coordinate.max()))
    assert result.all_converged


@pytest.mark.parametrize("rho", [0.05, 0.1, 0.2])
def test_sharp_side_holds_across_perturbation_levels(rho):
    dim, s = 10, 3
    reference, signal_set = _signals(dim, s, _boundary_mu(dim, s, -0.2), 3_000, seed=16)
    result = sharp_test(reference, signal_set, SharpTestConfig(rho=rho, seed=3))
    assert result.is_sharp
    assert result.r < 1e-6


def test_configuration_beyond_boundary_is_not_sharp():
    dim, s = 10, 3
    reference, signal_set = _signals(dim, s, _boundary_mu(dim, s, 0.2), 3_000, seed=12)
    result = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-4, seed=2))
    assert not result.is_sharp
    assert result.r > 1e-3


def test_report_is_deterministic_and_thread_independent():
    reference, signal_set = _signals(6, 2, 0.1, 800, seed=13)
    serial = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-3, seed=4))
    again = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-3, seed=4))
    threaded = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-3, seed=4, workers=3))
    assert np.array_equal(serial.per_coordinate, again.per_coordinate)
    assert np.array_equal(serial.per_coordinate, threaded.per_coordinate)
    assert np.array_equal(serial.perturbed_gram, threaded.perturbed_gram)


def test_distances_survive_signed_permutation():
    reference, signal_set = _signals(8, 2, 0.1, 2_000, seed=14)
    perm = np.array([3, 0, 7, 1, 6, 2, 5, 4])
    signs = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0])
    moved = make_dictionary(reference.matrix[:, perm] * signs)

    cfg = SharpTestConfig(rho=1e-4, seed=6)
    original = sharp_test(reference, signal_set, cfg)
    permuted = sharp_test(moved, signal_set, cfg)
    assert np.allclose(np.sort(original.per_coordinate), np.sort(permuted.per_coordinate), atol=1e-8)
    assert original.is_sharp == permuted.is_sharp


def test_unconverged_solves_invalidate_the_verdict():
    dim, s = 10, 3
    reference, signal_set = _signals(dim, s, _boundary_mu(dim, s, 0.2), 3_000, seed=12)
    cfg = SharpTestConfig(rho=1e-4, seed=2, solver=SolverConfig(max_iter=1))
    with pytest.raises(SolverError) as info:
        sharp_test(reference, signal_set, cfg)
    assert info.value.report is not None
    assert not info.value.report.all_converged


def test_report_json():
    reference, signal_set = _signals(4, 1, 0.1, 300, seed=15)
    document = sharp_test(reference, signal_set, SharpTestConfig(rho=1e-3, seed=1)).to_json()
    assert set(document) >= {"is_sharp", "r", "per_coordinate", "rho", "T", "seed"}
    assert len(document["per_coordinate"]) == 4


@pytest.mark.slow
def test_sharp_in_most_seeds():
    dim, s, n = 20, 5, 5_000
    reference, signal_set = _signals(dim, s, 0.1, n, seed=21)
    verdicts = [sharp_test(reference, signal_set, SharpTestConfig(rho=0.001, seed=seed)).is_sharp for seed in range(20)]
    assert sum(verdicts) >= 18


@pytest.mark.slow
def test_phase_transition_at_moderate_perturbation():
    dim, s, n = 20, 10, 1_600
    sharp_side, flat_side = 0, 0
    for seed in range(20):
        cfg = SharpTestConfig(rho=0.1, seed=seed)
        reference, signal_set = _signals(dim, s, _boundary_mu(dim, s, -0.2), n, seed=100 + seed)
        sharp_side += sharp_test(reference, signal_set, cfg).is_sharp
        reference, signal_set = _signals(dim, s, _boundary_mu(dim, s, 0.1), n, seed=200 + seed)
        try:
            flat_side += not sharp_test(reference, signal_set, cfg).is_sharp
        except SolverError:
            pass
    assert sharp_side >= 18
    assert flat_side >= 18


@pytest.mark.slow
def test_only_the_reference_is_sharp():
    reference, signal_set = _signals(10, 3, 0.1, 5_000, seed=31)
    cfg = SharpTestConfig(rho=0.01, seed=8)
    assert sharp_test(reference, signal_set, cfg).is_sharp
    for seed in range(20):
        candidate = random_gaussian_dictionary(10, seed=1_000 + seed)
        assert nmse(candidate, reference) > 0.1
        assert not sharp_test(candidate, signal_set, cfg).is_sharp
