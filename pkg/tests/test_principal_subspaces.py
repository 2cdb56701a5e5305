# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from ttn_core.boosted_least_squares import StabilityParams, boosted_sample
from ttn_core.errors import OracleError
from ttn_core.measures_bases import ProductMeasure, legendre_basis
from ttn_core.oracle import CountingOracle
from ttn_core.principal_subspaces import (
    adaptive_principal_subspace,
    assemble_coefficient_matrix,
    loo_error,
    principal_subspace,
    rank_for_tolerance,
    truncated_svd,
)


MEASURE = ProductMeasure.uniform(3)


def leaf_setup(rng, degree=3):
    space = legendre_basis(degree, variable=1)
    return space, boosted_sample(space, StabilityParams(), rng)


def phi(degree, x):
    return legendre_basis(degree).evaluate_univariate(x)[:, degree]


def test_columns_of_a_separated_basis_function_are_collinear(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: phi(2, x[:, 0]) * (1.0 + x[:, 1] * x[:, 2]), 3)
    complement = MEASURE.restrict([2, 3]).sample(rng, 5)
    matrix = assemble_coefficient_matrix(oracle, [1], space, sample, complement)
    assert matrix.matrix.shape == (4, 5)
    expected = np.outer(np.eye(4)[2], 1.0 + complement[:, 0] * complement[:, 1])
    np.testing.assert_allclose(matrix.matrix, expected, atol=1e-12)
    assert matrix.evaluations == sample.size * 5
    assert oracle.calls == sample.size * 5


def test_additive_function_shifts_only_the_constant_coefficient(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: x[:, 0] ** 3 + np.sin(x[:, 1] + x[:, 2]), 3)
    complement = MEASURE.restrict([2, 3]).sample(rng, 4)
    a = assemble_coefficient_matrix(oracle, [1], space, sample, complement).matrix
    np.testing.assert_allclose(a[1:] - a[1:, :1], 0.0, atol=1e-12)
    shifts = np.sin(complement.sum(axis=1))
    np.testing.assert_allclose(a[0] - a[0, 0], shifts - shifts[0], atol=1e-12)


def test_oracle_failure_names_the_column(rng):
    space, sample = leaf_setup(rng)

    def failing(x):
        if np.any(x[:, 1] > 0.5):
            raise RuntimeError('out of range')
        return x[:, 0]

    oracle = CountingOracle(failing, 3)
    with pytest.raises(OracleError) as error:
        assemble_coefficient_matrix(
            oracle, [1], space, sample, np.array([[0.0, 0.0], [0.9, 0.0]])
        )
    assert error.value.column == 1


def test_truncated_svd_examples(rng):
    a, b = np.array([1.0, -3.0, 2.0]), np.array([2.0, 1.0])
    singular_values, vectors = truncated_svd(np.outer(a, b), 1)
    assert singular_values[0] == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b))
    assert singular_values[1] == pytest.approx(0.0, abs=1e-12)
    # Sign convention: the largest-magnitude entry is positive.
    np.testing.assert_allclose(vectors[:, 0], -a / np.linalg.norm(a))

    singular_values, vectors = truncated_svd(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(singular_values, [3.0, 1.0])
    np.testing.assert_allclose(vectors[:, 0], [1.0, 0.0])

    matrix = rng.standard_normal((5, 7))
    singular_values, _ = truncated_svd(matrix, 3)
    eigenvalues = np.sort(np.linalg.eigvalsh(matrix @ matrix.T))[::-1]
    np.testing.assert_allclose(singular_values**2, eigenvalues, rtol=1e-10)
    with pytest.raises(ValueError):
        truncated_svd(matrix, 6)


def test_rank_for_tolerance_examples():
    assert rank_for_tolerance([3.0, 1.0, 0.1], 0.4) == 1
    assert rank_for_tolerance([3.0, 1.0, 0.1], 0.1) == 2
    assert rank_for_tolerance([3.0, 1.0, 0.1], 1.5) == 1
    assert rank_for_tolerance([3.0, 1.0, 0.1], 1e-6) == 3
    assert rank_for_tolerance([0.0, 0.0], 0.1) == 1


def test_loo_error_examples(rng):
    column = rng.standard_normal(4)
    assert loo_error(np.stack([column] * 3, axis=1), 1) == pytest.approx(0.0, abs=1e-20)
    assert loo_error(np.eye(2), 1) == pytest.approx(1.0)
    assert loo_error(np.zeros((3, 4)), 2) == 0.0
    matrix = rng.standard_normal((6, 9))
    errors = [loo_error(matrix, r) for r in range(1, 7)]
    assert all(0.0 <= e <= 1.0 for e in errors)
    assert all(later <= earlier + 1e-12 for earlier, later in zip(errors, errors[1:]))
    with pytest.raises(ValueError):
        loo_error(matrix[:, :1], 1)
    with pytest.raises(ValueError):
        loo_error(matrix, 7)


def test_svd_tail_identity_on_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m, z = rng.integers(1, 9), rng.integers(2, 25)
        matrix = rng.standard_normal((m, z))
        rank = int(rng.integers(1, min(m, z) + 1))
        singular_values, basis = truncated_svd(matrix, rank)
        residual = matrix - basis @ (basis.T @ matrix)
        tail = np.sum(singular_values[rank:] ** 2)
        assert np.sum(residual**2) == pytest.approx(tail, rel=1e-10, abs=1e-12)
        np.testing.assert_allclose(basis.T @ basis, np.eye(rank), atol=1e-10)


def test_adaptive_rank_one_stops_early(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: (1.0 + x[:, 0]) * (2.0 + x[:, 1] + x[:, 2]), 3)
    subspace = adaptive_principal_subspace(oracle, [1], space, sample, 1e-8, 3, MEASURE, rng)
    assert subspace.rank == 1
    assert subspace.columns <= 3
    assert subspace.tolerance_met
    assert subspace.evaluations == oracle.calls == subspace.columns * sample.size


def test_adaptive_with_huge_tolerance_uses_two_columns(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: np.exp(x[:, 0] * x[:, 1]) + x[:, 2], 3)
    subspace = adaptive_principal_subspace(oracle, [1], space, sample, 1e6, 3, MEASURE, rng)
    assert (subspace.rank, subspace.columns) == (1, 2)


def test_adaptive_respects_the_column_budget(rng):
    space, sample = leaf_setup(rng, degree=5)
    oracle = CountingOracle(lambda x: np.exp(3.0 * x[:, 0] * x[:, 1]) * np.cos(x[:, 2]), 3)
    subspace = adaptive_principal_subspace(oracle, [1], space, sample, 1e-14, 3, MEASURE, rng)
    assert subspace.columns <= 3 * space.dimension
    assert subspace.rank <= space.dimension


@pytest.mark.parametrize('seed', range(20))
def test_adaptive_subspace_matches_svd_of_its_matrix(seed):
    rng = np.random.default_rng(seed)
    degree = int(rng.integers(2, 8))
    tolerance = 10.0 ** rng.uniform(-8, -2)
    space, sample = leaf_setup(rng, degree=degree)
    shift = rng.uniform(0.5, 2.0)
    oracle = CountingOracle(lambda x: 1.0 / (6.0 + x[:, 0] * shift + x[:, 1] - x[:, 2]), 3)
    subspace = adaptive_principal_subspace(
        oracle, [1], space, sample, tolerance, 3, MEASURE, rng
    )
    a = subspace.coefficient_matrix.matrix
    assert a.shape[0] == space.dimension <= 8
    assert a.shape[1] <= 24
    singular_values, reference = truncated_svd(a, subspace.rank)
    assert np.max(subspace_angles(subspace.basis, reference)) < 1e-10
    np.testing.assert_allclose(subspace.singular_values, singular_values)
    residual = a - subspace.basis @ (subspace.basis.T @ a)
    tail = np.sum(singular_values[subspace.rank :] ** 2)
    assert np.sum(residual**2) == pytest.approx(tail, rel=1e-10, abs=1e-12 * np.sum(a**2))


def test_zero_function_is_degenerate(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: np.zeros(x.shape[0]), 3)
    subspace = adaptive_principal_subspace(oracle, [1], space, sample, 1e-6, 3, MEASURE, rng)
    assert subspace.degenerate
    assert subspace.rank == 1
    np.testing.assert_allclose(subspace.basis[:, 0], np.eye(4)[0])


def test_non_adaptive_uses_m_columns(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: (1.0 + x[:, 0]) * x[:, 1] + x[:, 0] ** 2 * x[:, 2], 3)
    subspace = principal_subspace(oracle, [1], space, sample, 1e-10, MEASURE, rng)
    assert subspace.columns == space.dimension
    assert subspace.rank == 2
    assert subspace.loo_error is None
    assert oracle.calls == space.dimension * sample.size


def test_column_check_sees_every_new_column(rng):
    space, sample = leaf_setup(rng)
    oracle = CountingOracle(lambda x: x[:, 0] * x[:, 1] + x[:, 2], 3)
    seen = []
    subspace = principal_subspace(
        oracle,
        [1],
        space,
        sample,
        1e-10,
        MEASURE,
        rng,
        column_check=lambda point, coefficients: seen.append(point.shape),
    )
    assert seen == [(2,)] * subspace.columns
