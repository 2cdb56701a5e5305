# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

from ttn_core.dimension_tree import balanced_binary, validate
from ttn_core.learner import LearnerConfig
from ttn_core.measures_bases import ProductMeasure, legendre_basis
from ttn_core.oracle import CountingOracle


SIX_VARIABLE_TREE_NODES = [
    [1],
    [2],
    [3],
    [4],
    [5],
    [6],
    [2, 3],
    [1, 2, 3],
    [4, 5, 6],
    [1, 2, 3, 4, 5, 6],
]


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def six_variable_tree():
    return validate(SIX_VARIABLE_TREE_NODES)


@pytest.fixture
def balanced_four():
    return balanced_binary(4)


@pytest.fixture
def uniform4():
    return ProductMeasure.uniform(4)


@pytest.fixture
def product_oracle():
    """u(x) = prod_i (1 + x_i / 2), a rank-one function on [-1, 1]^4."""
    return CountingOracle(lambda x: np.prod(1.0 + 0.5 * x, axis=1), 4, name='product')


@pytest.fixture
def legendre_leaves():
    """Fixed degree-3 Legendre leaf spaces for four variables, as learner sequences."""
    return {v: [legendre_basis(3, variable=v)] for v in range(1, 5)}


@pytest.fixture
def quick_config():
    return LearnerConfig(tolerance=1e-8, degree=3, workers=1)
