# SPDX-License-Identifier: Apache-2.0

"""Empirical alpha-principal subspaces of a projected function.

For a node alpha, the function u(., x_c) is projected onto V_alpha for a
number of complement points x_c; the coefficient vectors form the columns of
a matrix A whose leading left singular vectors span the principal subspace.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .boosted_least_squares import WeightedSampleSet, project
from .measures_bases import FeatureSpace, ProductMeasure
from .oracle import CountingOracle
from .utils import compose_points, sorted_variables


logger = logging.getLogger(__name__)

ColumnCheck = Callable[[np.ndarray, np.ndarray], None]


@dataclass(frozen=True)
class CoefficientMatrix:
    """Matrix A^alpha of shape (m_alpha, z_c) with the samples that generated it."""

    node: frozenset[int]
    matrix: np.ndarray
    alpha_points: np.ndarray
    complement_points: np.ndarray
    evaluations: int

    @property
    def columns(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PrincipalSubspace:
    """Orthonormal coefficients (m_alpha, r_alpha) of an estimated principal subspace."""

    node: frozenset[int]
    rank: int
    basis: np.ndarray
    singular_values: np.ndarray
    columns: int
    loo_error: Optional[float]
    tolerance_met: bool
    degenerate: bool
    evaluations: int
    coefficient_matrix: Optional[CoefficientMatrix] = None


def _as_matrix(matrix: Union[CoefficientMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(matrix, CoefficientMatrix):
        return matrix.matrix
    return np.asarray(matrix, dtype=float)


def evaluate_columns(
    oracle: CountingOracle,
    alpha: Iterable[int],
    alpha_points: np.ndarray,
    complement_points: np.ndarray,
    first_column: int = 0,
) -> np.ndarray:
    """Values u(x_alpha^i, x_c^l) as a ``(z_alpha, z_c)`` array, one oracle call per column."""
    alpha = frozenset(alpha)
    z_alpha = alpha_points.shape[0]
    grid = compose_points(oracle.dimension, alpha, alpha_points, complement_points)
    values = np.empty((z_alpha, complement_points.shape[0]))
    for column in range(complement_points.shape[0]):
        block = grid[column * z_alpha : (column + 1) * z_alpha]
        values[:, column] = oracle(block, column=first_column + column)
    return values


def assemble_coefficient_matrix(
    oracle: CountingOracle,
    alpha: Iterable[int],
    space: FeatureSpace,
    sample: WeightedSampleSet,
    complement_points: np.ndarray,
    delta: float = 0.9,
) -> CoefficientMatrix:
    """Evaluate u on the product grid and project every column onto ``space``.

    Column l holds the coefficients of Q u(., x_c^l); exactly z_alpha * z_c
    evaluations are made.
    """
    alpha = frozenset(alpha)
    complement_points = np.asarray(complement_points, dtype=float)
    values = evaluate_columns(oracle, alpha, sample.points, complement_points)
    return CoefficientMatrix(
        node=alpha,
        matrix=np.atleast_2d(project(space, sample, values, delta).reshape(space.dimension, -1)),
        alpha_points=sample.points,
        complement_points=complement_points,
        evaluations=values.size,
    )


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def truncated_svd(
    matrix: Union[CoefficientMatrix, np.ndarray], rank: int
) -> tuple[np.ndarray, np.ndarray]:
    """All singular values and the ``rank`` leading left singular vectors.

    Each returned vector has its largest-magnitude entry positive.
    """
    a = _as_matrix(matrix)
    if not 1 <= rank <= min(a.shape):
        raise ValueError(f'rank {rank} out of range for a matrix of shape {a.shape}')
    left, singular_values, _ = np.linalg.svd(a, full_matrices=False)
    return singular_values, _fix_signs(left[:, :rank])


def rank_for_tolerance(singular_values: np.ndarray, tolerance: float) -> int:
    """Minimal r >= 1 with sum_{k > r} sigma_k^2 <= tolerance^2 sum_k sigma_k^2."""
    energies = np.asarray(singular_values, dtype=float) ** 2
    total = float(energies.sum())
    if total == 0.0:
        return 1
    # tails[r - 1] = sum_{k > r} sigma_k^2
    tails = np.maximum(total - np.cumsum(energies), 0.0)
    for rank in range(1, len(energies) + 1):
        if tails[rank - 1] <= tolerance**2 * total:
            return rank
    return len(energies)


def loo_error(matrix: Union[CoefficientMatrix, np.ndarray], rank: int) -> float:
    """Leave-one-out ratio sum_l ||A_l - V V^T A_l||^2 / sum_l ||A_l||^2.

    V holds the ``rank`` leading left singular vectors of A without column l.
    """
    a = _as_matrix(matrix)
    m, z = a.shape
    if z < 2:
        raise ValueError('leave-one-out error needs at least two columns')
    if not 1 <= rank <= min(m, z - 1):
        raise ValueError(f'rank {rank} out of range [1, {min(m, z - 1)}]')
    denominator = float(np.sum(a**2))
    if denominator == 0.0:
        return 0.0
    numerator = 0.0
    for column in range(z):
        left, _, _ = np.linalg.svd(np.delete(a, column, axis=1), full_matrices=False)
        basis = left[:, :rank]
        residual = a[:, column] - basis @ (basis.T @ a[:, column])
        numerator += float(residual @ residual)
    return min(numerator / denominator, 1.0)


def _finish(
    alpha: frozenset[int],
    matrix: CoefficientMatrix,
    rank: int,
    loo: Optional[float],
    tolerance_met: bool,
) -> PrincipalSubspace:
    a = matrix.matrix
    rank = max(1, min(rank, min(a.shape)))
    if not np.any(a):
        logger.warning(f'Node {list(sorted_variables(alpha))}: coefficient matrix is zero')
        basis = np.zeros((a.shape[0], 1))
        basis[0, 0] = 1.0
        return PrincipalSubspace(
            node=alpha,
            rank=1,
            basis=basis,
            singular_values=np.zeros(min(a.shape)),
            columns=matrix.columns,
            loo_error=loo,
            tolerance_met=tolerance_met,
            degenerate=True,
            evaluations=matrix.evaluations,
            coefficient_matrix=matrix,
        )
    singular_values, basis = truncated_svd(a, rank)
    return PrincipalSubspace(
        node=alpha,
        rank=rank,
        basis=basis,
        singular_values=singular_values,
        columns=matrix.columns,
        loo_error=loo,
        tolerance_met=tolerance_met,
        degenerate=False,
        evaluations=matrix.evaluations,
        coefficient_matrix=matrix,
    )


def _complement_sampler(
    measure: ProductMeasure, alpha: frozenset[int], rng: np.random.Generator
) -> Callable[[int], np.ndarray]:
    complement = measure.complement(alpha)
    complement_measure = measure.restrict(complement) if complement else None

    def draw(count: int) -> np.ndarray:
        if complement_measure is None:
            return np.empty((count, 0))
        return complement_measure.sample(rng, count)

    return draw


def adaptive_principal_subspace(
    oracle: CountingOracle,
    alpha: Iterable[int],
    space: FeatureSpace,
    sample: WeightedSampleSet,
    tolerance: float,
    sampling_factor: int,
    measure: ProductMeasure,
    rng: np.random.Generator,
    delta: float = 0.9,
    initial_columns: Optional[tuple[np.ndarray, np.ndarray]] = None,
    column_check: Optional[ColumnCheck] = None,
) -> PrincipalSubspace:
    """Grow columns and rank until the leave-one-out ratio is at most tolerance^2.

    Columns are added one at a time (one complement draw and one projection
    each) up to ``sampling_factor * m`` columns. After each column the rank
    grows while the ratio exceeds tolerance^2 and r < min(m, z_c - 1).

    ``initial_columns`` are ``(complement_points, coefficients)`` already
    computed with the same sample. ``column_check`` is called with every new
    complement point and coefficient vector and may raise to abort.
    """
    if tolerance <= 0:
        raise ValueError(f'tolerance must be positive, got {tolerance}')
    if sampling_factor < 1:
        raise ValueError(f'sampling factor must be at least 1, got {sampling_factor}')
    alpha = frozenset(alpha)
    m = space.dimension
    budget = sampling_factor * m
    draw_complement = _complement_sampler(measure, alpha, rng)
    if initial_columns is not None:
        complement_points, coefficients = initial_columns
        complement_points = np.array(complement_points, dtype=float, ndmin=2)
        coefficients = np.array(coefficients, dtype=float).reshape(m, -1)
    else:
        complement_points = np.empty((0, oracle.dimension - len(alpha)))
        coefficients = np.empty((m, 0))
    evaluations = 0
    rank, loo, met = 1, math.inf, False

    def check_rank() -> tuple[int, float]:
        z = coefficients.shape[1]
        r = max(1, min(rank, m, z - 1))
        error = loo_error(coefficients, r)
        while error > tolerance**2 and r < min(m, z - 1):
            r += 1
            error = loo_error(coefficients, r)
        return r, error

    if coefficients.shape[1] >= 2:
        rank, loo = check_rank()
        met = loo <= tolerance**2
    while not met and coefficients.shape[1] < budget:
        new_point = draw_complement(1)
        column = coefficients.shape[1]
        values = evaluate_columns(oracle, alpha, sample.points, new_point, first_column=column)
        evaluations += values.size
        new_coefficients = project(space, sample, values, delta).reshape(m, 1)
        if column_check is not None:
            column_check(new_point[0], new_coefficients[:, 0])
        complement_points = np.vstack([complement_points, new_point])
        coefficients = np.hstack([coefficients, new_coefficients])
        if coefficients.shape[1] >= 2:
            rank, loo = check_rank()
            met = loo <= tolerance**2

    label = list(sorted_variables(alpha))
    if not met:
        if coefficients.shape[1] < 2:
            # A single column: rank from the singular values alone.
            rank = rank_for_tolerance(np.linalg.svd(coefficients, compute_uv=False), tolerance)
        logger.warning(
            f'Node {label}: tolerance {tolerance:.3g} not met with {coefficients.shape[1]} '
            f'columns (leave-one-out ratio {loo:.3g})'
        )
    matrix = CoefficientMatrix(
        node=alpha,
        matrix=coefficients,
        alpha_points=sample.points,
        complement_points=complement_points,
        evaluations=evaluations,
    )
    subspace = _finish(alpha, matrix, rank, None if math.isinf(loo) else loo, met)
    logger.info(
        f'Node {label}: rank {subspace.rank} of {m} from {subspace.columns} columns '
        f'({evaluations} evaluations)'
    )
    return subspace


def principal_subspace(
    oracle: CountingOracle,
    alpha: Iterable[int],
    space: FeatureSpace,
    sample: WeightedSampleSet,
    tolerance: float,
    measure: ProductMeasure,
    rng: np.random.Generator,
    delta: float = 0.9,
    columns: Optional[int] = None,
    initial_columns: Optional[tuple[np.ndarray, np.ndarray]] = None,
    column_check: Optional[ColumnCheck] = None,
) -> PrincipalSubspace:
    """Non-adaptive variant: z_c = m_alpha columns (or ``columns``), rank from the SVD tail."""
    alpha = frozenset(alpha)
    m = space.dimension
    target = m if columns is None else columns
    draw_complement = _complement_sampler(measure, alpha, rng)
    if initial_columns is not None:
        known_points = np.array(initial_columns[0], dtype=float, ndmin=2)
        known_coefficients = np.array(initial_columns[1], dtype=float).reshape(m, -1)
    else:
        known_points = np.empty((0, oracle.dimension - len(alpha)))
        known_coefficients = np.empty((m, 0))
    missing = max(target - known_coefficients.shape[1], 0)
    evaluations = 0
    new_points = np.empty((0, known_points.shape[1]))
    new_coefficients = np.empty((m, 0))
    if missing:
        new_points = draw_complement(missing)
        if column_check is None:
            matrix = assemble_coefficient_matrix(oracle, alpha, space, sample, new_points, delta)
            new_coefficients, evaluations = matrix.matrix, matrix.evaluations
        else:
            columns_found = []
            for offset, point in enumerate(new_points):
                values = evaluate_columns(
                    oracle,
                    alpha,
                    sample.points,
                    point[None, :],
                    first_column=known_coefficients.shape[1] + offset,
                )
                evaluations += values.size
                coefficients = project(space, sample, values, delta).reshape(m, 1)
                column_check(point, coefficients[:, 0])
                columns_found.append(coefficients)
            new_coefficients = np.hstack(columns_found)
    matrix = CoefficientMatrix(
        node=alpha,
        matrix=np.hstack([known_coefficients, new_coefficients]),
        alpha_points=sample.points,
        complement_points=np.vstack([known_points, new_points]),
        evaluations=evaluations,
    )
    singular_values = np.linalg.svd(matrix.matrix, compute_uv=False)
    rank = rank_for_tolerance(singular_values, tolerance)
    subspace = _finish(alpha, matrix, rank, None, True)
    logger.info(
        f'Node {list(sorted_variables(alpha))}: rank {subspace.rank} of {m} from '
        f'{subspace.columns} columns ({evaluations} evaluations)'
    )
    return subspace
