# SPDX-License-Identifier: Apache-2.0

import math
from functools import reduce
from typing import Iterable, Sequence

import numpy as np


def node_key(node: Iterable[int]) -> str:
    """Canonical string key of a node, e.g. ``'1,2,3'``."""
    return ','.join(str(v) for v in sorted(node))


def parse_node_key(key: str) -> frozenset[int]:
    """Inverse of :func:`node_key`."""
    return frozenset(int(item) for item in key.split(',') if item.strip())


def sorted_variables(node: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(node))


def row_wise_kron(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise Kronecker product of ``(n, r_i)`` arrays.

    The first factor is the most significant index (C order), so that column
    ``k`` of the result corresponds to the mixed-radix tuple ``(k_1, ..., k_s)``.
    """
    n = factors[0].shape[0]
    return reduce(
        lambda left, right: np.einsum('ni,nj->nij', left, right).reshape(n, -1), factors
    )


def columns_of(node: Iterable[int]) -> list[int]:
    """Zero-based columns of the variables of ``node`` in a full point array."""
    return [v - 1 for v in sorted(node)]


def compose_points(
    dimension: int,
    alpha: Iterable[int],
    alpha_points: np.ndarray,
    complement_points: np.ndarray,
) -> np.ndarray:
    """Build the product grid ``{(x_alpha^i, x_complement^l)}`` as full points.

    Rows are ordered column by column: the ``z_alpha`` points of column ``l``
    occupy rows ``l * z_alpha`` to ``(l + 1) * z_alpha - 1``.
    """
    alpha_cols = columns_of(alpha)
    complement_cols = [c for c in range(dimension) if c not in set(alpha_cols)]
    z_alpha = alpha_points.shape[0]
    z_complement = complement_points.shape[0]
    grid = np.empty((z_alpha * z_complement, dimension))
    grid[:, alpha_cols] = np.tile(alpha_points, (z_complement, 1))
    if complement_cols:
        grid[:, complement_cols] = np.repeat(complement_points, z_alpha, axis=0)
    return grid


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile of ``values`` (``q`` in ``[0, 1]``)."""
    ordered = sorted(values)
    if not ordered:
        return math.nan
    index = max(math.ceil(q * len(ordered)) - 1, 0)
    return float(ordered[min(index, len(ordered) - 1)])
