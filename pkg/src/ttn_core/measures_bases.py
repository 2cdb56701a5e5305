# SPDX-License-Identifier: Apache-2.0

"""Product probability measures and orthonormal feature spaces.

Leaf feature spaces are univariate orthonormal polynomials generated by their
three-term recurrence. Interior feature spaces are tensor products of learned
subspaces, each subspace being a coefficient expansion over the feature space
of its own node.
"""

import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import DimensionMismatchError, InvalidIntervalError
from .utils import row_wise_kron, sorted_variables


# Gaussian marginals are handled on [-10, 10]; the neglected mass is below 1e-22.
GAUSSIAN_TRUNCATION = 10.0

MIN_QUADRATURE_NODES = 64


class MeasureKind(str, Enum):
    UNIFORM = 'uniform'
    GAUSSIAN = 'gaussian'


class PolynomialFamily(str, Enum):
    LEGENDRE = 'legendre'
    HERMITE = 'hermite'


class MarginalMeasure(BaseModel):
    """Probability measure of one variable: uniform on [lower, upper] or standard Gaussian."""

    model_config = ConfigDict(frozen=True)

    kind: MeasureKind = MeasureKind.UNIFORM
    lower: Optional[float] = -1.0
    upper: Optional[float] = 1.0

    @model_validator(mode='after')
    def _check_support(self) -> 'MarginalMeasure':
        if self.kind == MeasureKind.UNIFORM:
            if self.lower is None or self.upper is None:
                raise ValueError('uniform measure requires lower and upper bounds')
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise ValueError('uniform measure requires finite bounds')
            if self.lower >= self.upper:
                raise ValueError(f'invalid interval [{self.lower}, {self.upper}]')
        return self

    @classmethod
    def uniform(cls, lower: float = -1.0, upper: float = 1.0) -> 'MarginalMeasure':
        return cls(kind=MeasureKind.UNIFORM, lower=lower, upper=upper)

    @classmethod
    def gaussian(cls) -> 'MarginalMeasure':
        return cls(kind=MeasureKind.GAUSSIAN, lower=None, upper=None)

    def truncated_support(self) -> tuple[float, float]:
        if self.kind == MeasureKind.GAUSSIAN:
            return -GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION
        return float(self.lower), float(self.upper)

    def lebesgue_density(self, x: np.ndarray) -> np.ndarray:
        """Density of the measure with respect to the Lebesgue measure."""
        x = np.asarray(x, dtype=float)
        if self.kind == MeasureKind.GAUSSIAN:
            return np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi)
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, 1.0 / (self.upper - self.lower), 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == MeasureKind.GAUSSIAN:
            return rng.standard_normal(size)
        return rng.uniform(self.lower, self.upper, size)

    def quadrature(self, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
        """Gauss quadrature with weights summing to one."""
        if self.kind == MeasureKind.GAUSSIAN:
            nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
            return nodes, weights / math.sqrt(2.0 * math.pi)
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        half_width = 0.5 * (self.upper - self.lower)
        return self.lower + half_width * (nodes + 1.0), 0.5 * weights


class ProductMeasure(BaseModel):
    """Product measure mu = mu_1 x ... x mu_d; variables are numbered from 1."""

    model_config = ConfigDict(frozen=True)

    marginals: tuple[MarginalMeasure, ...]

    @model_validator(mode='after')
    def _check_dimension(self) -> 'ProductMeasure':
        if len(self.marginals) < 1:
            raise ValueError('a product measure needs at least one marginal')
        return self

    @classmethod
    def uniform(cls, dimension: int, lower: float = -1.0, upper: float = 1.0) -> 'ProductMeasure':
        return cls(marginals=(MarginalMeasure.uniform(lower, upper),) * dimension)

    @classmethod
    def gaussian(cls, dimension: int) -> 'ProductMeasure':
        return cls(marginals=(MarginalMeasure.gaussian(),) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    def marginal(self, variable: int) -> MarginalMeasure:
        return self.marginals[variable - 1]

    def restrict(self, variables: Iterable[int]) -> 'ProductMeasure':
        """Measure mu_alpha of the variables in ``variables``, in increasing variable order."""
        return ProductMeasure(marginals=tuple(self.marginal(v) for v in sorted(variables)))

    def complement(self, variables: Iterable[int]) -> tuple[int, ...]:
        excluded = set(variables)
        return tuple(v for v in range(1, self.dimension + 1) if v not in excluded)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        points = np.empty((size, self.dimension))
        for column, marginal in enumerate(self.marginals):
            points[:, column] = marginal.sample(rng, size)
        return points


def _recurrence(family: PolynomialFamily, degree: int) -> np.ndarray:
    """Coefficients b_k, k = 0..degree, of the monic recurrence (a_k = 0 for both families)."""
    k = np.arange(degree + 1, dtype=float)
    if family == PolynomialFamily.HERMITE:
        return k
    b = np.zeros(degree + 1)
    b[1:] = k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    return b


class FeatureSpace(ABC):
    """Finite-dimensional subspace of L2(mu_alpha) given by an orthonormal basis."""

    @property
    @abstractmethod
    def variables(self) -> tuple[int, ...]:
        """Sorted variables of the node the space lives on."""

    @property
    @abstractmethod
    def dimension(self) -> int:
        """Number of basis functions m_alpha."""

    @property
    @abstractmethod
    def label(self) -> str:
        """Short human-readable identity, used in logs and errors."""

    @abstractmethod
    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values of the basis at ``points`` of shape ``(n, #alpha)``; returns ``(n, m_alpha)``."""

    @abstractmethod
    def leaf_spaces(self) -> dict[int, 'PolynomialSpace']:
        """Polynomial spaces of the leaves below this space, keyed by variable."""

    @property
    def max_degree(self) -> int:
        return max(space.degree for space in self.leaf_spaces().values())

    def measure(self) -> ProductMeasure:
        leaves = self.leaf_spaces()
        return ProductMeasure(marginals=tuple(leaves[v].marginal for v in self.variables))

    def _as_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, len(self.variables))
        if points.shape[1] != len(self.variables):
            raise DimensionMismatchError(
                f'space {self.label} expects {len(self.variables)} coordinates, '
                f'got {points.shape[1]}'
            )
        return points


class PolynomialSpace(FeatureSpace):
    """Orthonormal polynomials of degree 0..degree for one variable.

    The basis of degree p is a prefix of the basis of degree p + 1.
    """

    def __init__(
        self,
        family: PolynomialFamily,
        degree: int,
        marginal: MarginalMeasure,
        variable: int = 1,
    ):
        if degree < 0:
            raise ValueError(f'polynomial degree must be nonnegative, got {degree}')
        family = PolynomialFamily(family)
        expected = (
            MeasureKind.GAUSSIAN if family == PolynomialFamily.HERMITE else MeasureKind.UNIFORM
        )
        if marginal.kind != expected:
            raise ValueError(f'{family.value} polynomials require a {expected.value} measure')
        self.family = family
        self.degree = degree
        self.marginal = marginal
        self.variable = variable
        self._b = _recurrence(family, degree)

    def __repr__(self):
        return f'<PolynomialSpace {self.label}>'

    def __eq__(self, other):
        return (
            isinstance(other, PolynomialSpace)
            and self.family == other.family
            and self.degree == other.degree
            and self.marginal == other.marginal
            and self.variable == other.variable
        )

    def __hash__(self):
        return hash((self.family, self.degree, self.marginal, self.variable))

    @property
    def variables(self) -> tuple[int, ...]:
        return (self.variable,)

    @property
    def dimension(self) -> int:
        return self.degree + 1

    @property
    def label(self) -> str:
        return f'{self.family.value}[p={self.degree}]@x{self.variable}'

    def leaf_spaces(self) -> dict[int, 'PolynomialSpace']:
        return {self.variable: self}

    def with_degree(self, degree: int) -> 'PolynomialSpace':
        return PolynomialSpace(self.family, degree, self.marginal, self.variable)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        if self.family == PolynomialFamily.HERMITE:
            return x
        a, b = self.marginal.lower, self.marginal.upper
        return (2.0 * x - a - b) / (b - a)

    def evaluate_univariate(self, x: np.ndarray) -> np.ndarray:
        t = self.standardize(np.ravel(np.asarray(x, dtype=float)))
        out = np.zeros((t.size, self.degree + 1))
        out[:, 0] = 1.0
        if self.degree > 0:
            out[:, 1] = t / math.sqrt(self._b[1])
        for k in range(2, self.degree + 1):
            previous = math.sqrt(self._b[k - 1]) * out[:, k - 2]
            out[:, k] = (t * out[:, k - 1] - previous) / math.sqrt(self._b[k])
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate_univariate(self._as_points(points)[:, 0])

    def quadrature(self, n_nodes: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        if n_nodes is None:
            n_nodes = max(2 * self.degree + 1, MIN_QUADRATURE_NODES)
        return self.marginal.quadrature(n_nodes)


class SubspaceBasis(FeatureSpace):
    """Orthonormal basis psi_k = sum_j coefficients[j, k] phi_j of a subspace of ``space``."""

    def __init__(self, node: Iterable[int], space: FeatureSpace, coefficients: np.ndarray):
        coefficients = np.array(coefficients, dtype=float, copy=True)
        if coefficients.ndim != 2 or coefficients.shape[0] != space.dimension:
            raise DimensionMismatchError(
                f'coefficients of shape {coefficients.shape} do not fit space {space.label} '
                f'of dimension {space.dimension}'
            )
        coefficients.flags.writeable = False
        self.node = frozenset(node)
        self.space = space
        self.coefficients = coefficients

    def __repr__(self):
        return f'<SubspaceBasis {self.label}>'

    @property
    def variables(self) -> tuple[int, ...]:
        return self.space.variables

    @property
    def dimension(self) -> int:
        return self.coefficients.shape[1]

    @property
    def label(self) -> str:
        return f'U{list(sorted(self.node))}[r={self.dimension}]'

    def leaf_spaces(self) -> dict[int, 'PolynomialSpace']:
        return self.space.leaf_spaces()

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.space.evaluate(self._as_points(points)) @ self.coefficients


class TensorProductSpace(FeatureSpace):
    """V_alpha = tensor product of the children's subspaces.

    Factors are ordered lexicographically by their sorted variables; the product
    basis is indexed in mixed radix with the first factor most significant.
    """

    def __init__(self, factors: Sequence[FeatureSpace]):
        if not factors:
            raise ValueError('a tensor product space needs at least one factor')
        self.factors = tuple(sorted(factors, key=lambda f: f.variables))
        variables = [v for f in self.factors for v in f.variables]
        if len(set(variables)) != len(variables):
            raise DimensionMismatchError('tensor product factors must have disjoint variables')
        self._variables = sorted_variables(variables)
        position = {v: i for i, v in enumerate(self._variables)}
        self._factor_columns = [[position[v] for v in f.variables] for f in self.factors]

    def __repr__(self):
        return f'<TensorProductSpace {self.label}>'

    @property
    def variables(self) -> tuple[int, ...]:
        return self._variables

    @property
    def dimension(self) -> int:
        return math.prod(f.dimension for f in self.factors)

    @property
    def factor_dimensions(self) -> tuple[int, ...]:
        return tuple(f.dimension for f in self.factors)

    @property
    def factor_columns(self) -> list[list[int]]:
        return self._factor_columns

    @property
    def label(self) -> str:
        return ' x '.join(f.label for f in self.factors)

    def leaf_spaces(self) -> dict[int, 'PolynomialSpace']:
        leaves = {}
        for factor in self.factors:
            leaves.update(factor.leaf_spaces())
        return leaves

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = self._as_points(points)
        return row_wise_kron(
            [f.evaluate(points[:, cols]) for f, cols in zip(self.factors, self._factor_columns)]
        )


def legendre_basis(
    max_degree: int, interval: tuple[float, float] = (-1.0, 1.0), variable: int = 1
) -> PolynomialSpace:
    """Legendre polynomials orthonormal for the uniform measure on ``interval``."""
    a, b = float(interval[0]), float(interval[1])
    if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
        raise InvalidIntervalError(f'invalid interval [{a}, {b}]')
    return PolynomialSpace(
        PolynomialFamily.LEGENDRE, max_degree, MarginalMeasure.uniform(a, b), variable
    )


def hermite_basis(max_degree: int, variable: int = 1) -> PolynomialSpace:
    """Probabilists' Hermite polynomials orthonormal for the standard Gaussian measure."""
    return PolynomialSpace(
        PolynomialFamily.HERMITE, max_degree, MarginalMeasure.gaussian(), variable
    )


def polynomial_space_for(marginal: MarginalMeasure, degree: int, variable: int) -> PolynomialSpace:
    """Canonical polynomial family of a marginal measure."""
    if marginal.kind == MeasureKind.GAUSSIAN:
        return hermite_basis(degree, variable)
    return legendre_basis(degree, (marginal.lower, marginal.upper), variable)


def polynomial_sequence(
    marginal: MarginalMeasure, variable: int, max_degree: int, min_degree: int = 1
) -> list[PolynomialSpace]:
    """Nested, degree-graded candidate spaces used by leaf-basis adaptation."""
    if min_degree > max_degree:
        raise ValueError(f'min_degree {min_degree} exceeds max_degree {max_degree}')
    return [polynomial_space_for(marginal, p, variable) for p in range(min_degree, max_degree + 1)]


def eval_basis(space: FeatureSpace, point: Sequence[float]) -> np.ndarray:
    """Basis values (phi_1(x), ..., phi_m(x)) at a single point x_alpha."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.ndim != 1 or point.size != len(space.variables):
        raise DimensionMismatchError(
            f'point with {point.size} coordinates does not match variables '
            f'{list(space.variables)} of space {space.label}'
        )
    return space.evaluate(point.reshape(1, -1))[0]


def tensor_quadrature(
    measure: ProductMeasure, n_nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Tensorized Gauss rule; the number of points grows as n_nodes ** dimension."""
    rules = [m.quadrature(n_nodes) for m in measure.marginals]
    grids = np.meshgrid(*[nodes for nodes, _ in rules], indexing='ij')
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = row_wise_kron([w.reshape(1, -1) for _, w in rules]).ravel()
    return points, weights


def gram_matrix(space: FeatureSpace, n_nodes: Optional[int] = None) -> np.ndarray:
    """Gram matrix of the basis of ``space`` computed by Gauss quadrature.

    Univariate spaces use max(2p + 1, 64) nodes; multivariate spaces use a
    tensorized rule with 2p + 1 nodes per variable, exact for the polynomial
    integrands involved.
    """
    if isinstance(space, PolynomialSpace):
        nodes, weights = space.quadrature(n_nodes)
        values = space.evaluate_univariate(nodes)
    else:
        if n_nodes is None:
            n_nodes = 2 * space.max_degree + 1
        nodes, weights = tensor_quadrature(space.measure(), n_nodes)
        values = space.evaluate(nodes)
    return values.T @ (weights[:, None] * values)
