# SPDX-License-Identifier: Apache-2.0

"""Optimal sampling measures w(x)^-1 dmu for weighted least squares.

Leaves are sampled exactly through the mixture (1/m) sum_j phi_j^2 dmu and an
inverse CDF tabulated on a grid. Tensor products of learned subspaces are
sampled child by child; inside one child, coordinates are drawn sequentially
from conditional densities of the squared expansion.
"""

import logging
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import NormalizationError
from .measures_bases import FeatureSpace, PolynomialSpace, SubspaceBasis, TensorProductSpace


logger = logging.getLogger(__name__)

INITIAL_GRID_SIZE = 2048
MAX_GRID_SIZE = 2**20
GRID_CDF_TOLERANCE = 1e-6
NORMALIZATION_TOLERANCE = 1e-8
# Rows per chunk when tabulating batched conditional CDFs.
CDF_CHUNK_ROWS = 256


class SamplingDensity:
    """Optimal density w^-1(x) = (1/m) sum_j phi_j(x)^2 w.r.t. mu_alpha, and its weight w."""

    def __init__(self, space: FeatureSpace):
        self.space = space

    def __repr__(self):
        return f'<SamplingDensity of {self.space.label}>'

    def inverse_weight(self, points: np.ndarray) -> np.ndarray:
        points = self.space._as_points(points)
        if isinstance(self.space, TensorProductSpace):
            # Product form over the children of the node.
            result = np.ones(points.shape[0])
            for factor, cols in zip(self.space.factors, self.space.factor_columns):
                result *= SamplingDensity(factor).inverse_weight(points[:, cols])
            return result
        return np.mean(self.space.evaluate(points) ** 2, axis=1)

    def weight(self, points: np.ndarray) -> np.ndarray:
        inverse = self.inverse_weight(points)
        return np.divide(1.0, inverse, out=np.full_like(inverse, np.inf), where=inverse > 0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.inverse_weight(points)


def density(space: FeatureSpace) -> SamplingDensity:
    return SamplingDensity(space)


def _component_cdfs(space: PolynomialSpace, size: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = space.marginal.truncated_support()
    grid = np.linspace(a, b, size)
    values = space.evaluate_univariate(grid) ** 2 * space.marginal.lebesgue_density(grid)[:, None]
    cdfs = cumulative_trapezoid(values, grid, axis=0, initial=0.0).T
    return grid, cdfs / cdfs[:, -1:]


@lru_cache(maxsize=256)
def leaf_cdf_tables(space: PolynomialSpace) -> tuple[np.ndarray, np.ndarray]:
    """Grid and CDFs of phi_j^2 dmu for every j, shape ``(m, N)``.

    The grid starts at 2048 nodes and doubles until two successive resolutions
    agree to 1e-6 at the shared nodes.
    """
    size = INITIAL_GRID_SIZE
    grid, cdfs = _component_cdfs(space, size)
    while size < MAX_GRID_SIZE:
        finer_grid, finer_cdfs = _component_cdfs(space, 2 * size - 1)
        difference = np.max(np.abs(finer_cdfs[:, ::2] - cdfs))
        grid, cdfs, size = finer_grid, finer_cdfs, 2 * size - 1
        if difference < GRID_CDF_TOLERANCE:
            break
    else:
        logger.warning(f'CDF grid for {space.label} reached the size cap of {MAX_GRID_SIZE}')
    logger.debug(f'Tabulated CDFs of {space.label} on {size} nodes')
    grid.flags.writeable = False
    cdfs.flags.writeable = False
    return grid, cdfs


def sample_leaf(
    space: PolynomialSpace, rng: np.random.Generator, size: Optional[int] = None
) -> Union[float, np.ndarray]:
    """Draw from (1/m) sum_j phi_j^2 dmu_nu.

    A component j is picked uniformly, then the CDF of phi_j^2 dmu_nu is inverted.
    """
    grid, cdfs = leaf_cdf_tables(space)
    count = 1 if size is None else size
    components = rng.integers(0, space.dimension, count)
    uniforms = rng.random(count)
    draws = np.empty(count)
    for j in np.unique(components):
        mask = components == j
        draws[mask] = np.interp(uniforms[mask], cdfs[j], grid)
    return float(draws[0]) if size is None else draws


def _invert_batched_cdf(
    grid: np.ndarray, densities: np.ndarray, uniforms: np.ndarray
) -> np.ndarray:
    """Inverse CDF of each row of ``densities`` tabulated on ``grid``, at ``uniforms``."""
    cdf = cumulative_trapezoid(densities, grid, axis=1, initial=0.0)
    totals = cdf[:, -1:]
    uniform_cdf = np.tile(np.linspace(0.0, 1.0, grid.size), (cdf.shape[0], 1))
    cdf = np.divide(cdf, totals, out=uniform_cdf, where=totals > 0)
    rows, size = cdf.shape
    # Offsetting each row by 2 * row makes the flattened table increasing.
    offsets = 2.0 * np.arange(rows)
    flat = (cdf + offsets[:, None]).ravel()
    index = np.searchsorted(flat, uniforms + offsets) - np.arange(rows) * size
    index = np.clip(index, 1, size - 1)
    row = np.arange(rows)
    left, right = cdf[row, index - 1], cdf[row, index]
    slope = right - left
    fraction = np.divide(uniforms - left, slope, out=np.zeros_like(slope), where=slope > 0)
    return grid[index - 1] + np.clip(fraction, 0.0, 1.0) * (grid[index] - grid[index - 1])


def _sample_univariate_expansion(
    space: PolynomialSpace, coefficients: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    grid, _ = leaf_cdf_tables(space)
    features = space.evaluate_univariate(grid)
    lebesgue = space.marginal.lebesgue_density(grid)
    uniforms = rng.random(coefficients.shape[0])
    draws = np.empty(coefficients.shape[0])
    for start in range(0, coefficients.shape[0], CDF_CHUNK_ROWS):
        stop = start + CDF_CHUNK_ROWS
        densities = (coefficients[start:stop] @ features.T) ** 2 * lebesgue
        draws[start:stop] = _invert_batched_cdf(grid, densities, uniforms[start:stop])
    return draws[:, None]


def _pick_eigencomponents(
    matrices: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One eigenvector per PSD matrix, chosen with probability lambda / sum(lambda)."""
    eigenvalues, eigenvectors = np.linalg.eigh(matrices)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    totals = eigenvalues.sum(axis=1, keepdims=True)
    fallback = np.full_like(eigenvalues, 1.0 / eigenvalues.shape[1])
    probabilities = np.divide(eigenvalues, totals, out=fallback, where=totals > 0)
    cumulative = np.cumsum(probabilities, axis=1)
    uniforms = rng.random(matrices.shape[0])
    chosen = np.minimum((cumulative < uniforms[:, None]).sum(axis=1), matrices.shape[1] - 1)
    return eigenvectors[np.arange(matrices.shape[0]), :, chosen]


def _sample_expansion(
    space: FeatureSpace, coefficients: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One point per row from (sum_j c_j phi_j)^2 dmu; rows of ``coefficients`` have unit norm."""
    if isinstance(space, PolynomialSpace):
        return _sample_univariate_expansion(space, coefficients, rng)
    if isinstance(space, SubspaceBasis):
        return _sample_expansion(space.space, coefficients @ space.coefficients.T, rng)

    batch = coefficients.shape[0]
    dims = space.factor_dimensions
    weights = coefficients.reshape((batch,) + dims)
    points = np.empty((batch, len(space.variables)))
    for factor, cols in zip(space.factors, space.factor_columns):
        unfolding = weights.reshape(batch, weights.shape[1], -1)
        # Marginal of this factor: sum_e lambda_e (u_e . psi)^2 with M = W W^T.
        marginal = np.einsum('bij,bkj->bik', unfolding, unfolding)
        directions = _pick_eigencomponents(marginal, rng)
        factor_points = _sample_expansion(factor, directions, rng)
        points[:, cols] = factor_points
        values = factor.evaluate(factor_points)
        weights = np.einsum('bk...,bk->b...', weights, values)
        norms = np.sqrt(np.sum(weights.reshape(batch, -1) ** 2, axis=1))
        norms = np.where(norms > 0, norms, 1.0)
        weights = weights / norms.reshape((batch,) + (1,) * (weights.ndim - 1))
    return points


def check_normalized(space: FeatureSpace):
    """Raise NormalizationError when a subspace basis below ``space`` is not orthonormal."""
    if isinstance(space, SubspaceBasis):
        gram = space.coefficients.T @ space.coefficients
        deviation = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
        if deviation > NORMALIZATION_TOLERANCE:
            raise NormalizationError(
                f'basis of {space.label} deviates from orthonormality by {deviation:.3g}'
            )
        check_normalized(space.space)
    elif isinstance(space, TensorProductSpace):
        for factor in space.factors:
            check_normalized(factor)


def sample_interior(
    child_subspaces: Sequence[FeatureSpace],
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Draw from the product over children of (1/r_beta) sum_k psi_k^2 dmu_beta.

    Returns points of shape ``(size, #alpha)`` (or ``(#alpha,)`` when ``size``
    is None) with columns in increasing variable order.
    """
    product = TensorProductSpace(child_subspaces)
    for child in product.factors:
        check_normalized(child)
    count = 1 if size is None else size
    points = np.empty((count, len(product.variables)))
    for child, cols in zip(product.factors, product.factor_columns):
        if isinstance(child, PolynomialSpace):
            points[:, cols] = sample_leaf(child, rng, count)[:, None]
            continue
        components = rng.integers(0, child.dimension, count)
        points[:, cols] = _sample_expansion(child, np.eye(child.dimension)[components], rng)
    return points[0] if size is None else points


def draw_optimal_sample(space: FeatureSpace, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` i.i.d. points from the optimal measure of ``space``, shape ``(size, #alpha)``."""
    if isinstance(space, PolynomialSpace):
        return sample_leaf(space, rng, size)[:, None]
    if isinstance(space, TensorProductSpace):
        return sample_interior(space.factors, rng, size)
    return sample_interior([space], rng, size)
