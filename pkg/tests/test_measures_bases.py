# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

from ttn_core.errors import DimensionMismatchError, InvalidIntervalError
from ttn_core.measures_bases import (
    MarginalMeasure,
    ProductMeasure,
    SubspaceBasis,
    TensorProductSpace,
    eval_basis,
    gram_matrix,
    hermite_basis,
    legendre_basis,
    polynomial_sequence,
)


def test_legendre_degree_zero_is_constant():
    space = legendre_basis(0)
    assert space.dimension == 1
    np.testing.assert_allclose(space.evaluate_univariate([-0.3, 0.0, 0.9]), [[1.0]] * 3)


def test_legendre_values():
    assert eval_basis(legendre_basis(1), [1.0])[1] == pytest.approx(1.7320508, abs=1e-7)
    np.testing.assert_allclose(eval_basis(legendre_basis(1), [0.0]), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(
        eval_basis(legendre_basis(2), [1.0]), [1.0, math.sqrt(3), math.sqrt(5)], rtol=1e-12
    )


def test_legendre_on_shifted_interval_is_orthonormal():
    space = legendre_basis(6, interval=(2.0, 5.0))
    np.testing.assert_allclose(gram_matrix(space), np.eye(7), atol=1e-10)
    # Endpoint values are sqrt(2k + 1) on any interval.
    np.testing.assert_allclose(eval_basis(space, [5.0])[:3], [1.0, math.sqrt(3), math.sqrt(5)])


@pytest.mark.parametrize('interval', [(1.0, 1.0), (2.0, -1.0), (0.0, math.inf)])
def test_legendre_rejects_invalid_interval(interval):
    with pytest.raises(InvalidIntervalError):
        legendre_basis(2, interval=interval)


def test_hermite_values_and_orthonormality():
    space = hermite_basis(15)
    assert eval_basis(hermite_basis(0), [5.0])[0] == 1.0
    assert eval_basis(hermite_basis(2), [0.0])[2] == pytest.approx(-0.70710678, abs=1e-8)
    gram = gram_matrix(space)
    assert abs(gram[1, 2]) < 1e-10
    assert np.max(np.abs(np.linalg.eigvalsh(gram) - 1.0)) < 1e-10


@pytest.mark.parametrize('degree', [3, 8, 15])
def test_legendre_gram_is_identity(degree):
    gram = gram_matrix(legendre_basis(degree))
    assert np.max(np.abs(np.linalg.eigvalsh(gram) - 1.0)) < 1e-10


def test_odd_polynomials_vanish_at_zero():
    for space in (legendre_basis(7), hermite_basis(7)):
        values = eval_basis(space, [0.0])
        assert values[0] == 1.0
        np.testing.assert_allclose(values[1::2], 0.0, atol=1e-14)


def test_sequences_are_nested(rng):
    sequence = polynomial_sequence(MarginalMeasure.uniform(), 1, max_degree=6)
    assert [s.degree for s in sequence] == [1, 2, 3, 4, 5, 6]
    x = rng.uniform(-1, 1, 50)
    small, large = sequence[2].evaluate_univariate(x), sequence[5].evaluate_univariate(x)
    np.testing.assert_allclose(large[:, : small.shape[1]], small)


def test_marginal_quadrature_has_unit_mass():
    for marginal in (MarginalMeasure.uniform(-3.0, 7.0), MarginalMeasure.gaussian()):
        _, weights = marginal.quadrature(64)
        assert weights.sum() == pytest.approx(1.0, rel=1e-12)


def test_product_measure_restrict_keeps_variable_order():
    measure = ProductMeasure(
        marginals=(
            MarginalMeasure.uniform(),
            MarginalMeasure.gaussian(),
            MarginalMeasure.uniform(0.0, 2.0),
        )
    )
    restricted = measure.restrict([3, 2])
    assert restricted.marginals == (MarginalMeasure.gaussian(), MarginalMeasure.uniform(0.0, 2.0))
    assert measure.complement([2]) == (1, 3)


def test_tensor_product_orders_factors_and_stays_orthonormal():
    product = TensorProductSpace(
        [legendre_basis(2, variable=3), legendre_basis(1, variable=1)]
    )
    assert product.variables == (1, 3)
    assert product.factor_dimensions == (2, 3)
    # First factor is the most significant index.
    values = eval_basis(product, [1.0, 0.0])
    expected = np.kron(eval_basis(legendre_basis(1), [1.0]), eval_basis(legendre_basis(2), [0.0]))
    np.testing.assert_allclose(values, expected)
    np.testing.assert_allclose(gram_matrix(product), np.eye(6), atol=1e-10)


def test_subspace_basis_with_orthonormal_coefficients_is_orthonormal(rng):
    product = TensorProductSpace([legendre_basis(2, variable=1), legendre_basis(2, variable=2)])
    coefficients, _ = np.linalg.qr(rng.standard_normal((9, 3)))
    subspace = SubspaceBasis([1, 2], product, coefficients)
    assert subspace.dimension == 3
    np.testing.assert_allclose(gram_matrix(subspace), np.eye(3), atol=1e-10)
    with pytest.raises(ValueError):
        subspace.coefficients[0, 0] = 1.0


def test_eval_basis_rejects_wrong_point_size():
    with pytest.raises(DimensionMismatchError):
        eval_basis(legendre_basis(2), [0.1, 0.2])
