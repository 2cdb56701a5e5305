# SPDX-License-Identifier: Apache-2.0

"""Closed-form test functions and the registry the experiment harness draws from."""

import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ttn_core.measures_bases import ProductMeasure
from ttn_core.oracle import CountingOracle

from .function_params import (
    Anisotropic6Args,
    HenonHeilesArgs,
    SumBivariateArgs,
    SumTrivariateArgs,
    baseFunctionArgs,
)


logger = logging.getLogger(__name__)


def henon_heiles(dimension: int = 8, sigma: float = 0.2) -> CountingOracle:
    """Henon-Heiles potential, a degree-4 polynomial meant for the standard Gaussian measure."""
    if dimension < 2:
        raise ValueError(f'henon-heiles needs d >= 2, got {dimension}')

    def potential(x: np.ndarray) -> np.ndarray:
        head, tail = x[:, :-1], x[:, 1:]
        return (
            0.5 * np.sum(x**2, axis=1)
            + sigma * np.sum(head * tail**2 - head**3, axis=1)
            + sigma / 16.0 * np.sum((head**2 + tail**2) ** 2, axis=1)
        )

    return CountingOracle(potential, dimension, name='henon-heiles')


def anisotropic6() -> CountingOracle:
    """1 / (10 + 2 x1 + x3 + 2 x4 - x5)^2 on [-1, 1]^6; x2 and x6 are inactive."""

    def anisotropic(x: np.ndarray) -> np.ndarray:
        return 1.0 / (10.0 + 2.0 * x[:, 0] + x[:, 2] + 2.0 * x[:, 3] - x[:, 4]) ** 2

    return CountingOracle(anisotropic, 6, name='anisotropic6')


def sum_bivariate(dimension: int = 8) -> CountingOracle:
    """Sum over disjoint pairs (1,2), (3,4), ... of sum_{i=0..3} (x_nu x_{nu+1})^i."""
    if dimension < 2 or dimension % 2:
        raise ValueError(f'sum-bivariate needs an even d >= 2, got {dimension}')

    def bivariate(x: np.ndarray) -> np.ndarray:
        products = x[:, 0::2] * x[:, 1::2]
        return np.sum(1.0 + products + products**2 + products**3, axis=1)

    return CountingOracle(bivariate, dimension, name='sum-bivariate')


def sum_trivariate(dimension: int = 19) -> CountingOracle:
    """Sum over overlapping triples nu = 1..d-2 of sum_{i=0..2} (x_nu x_{nu+1} x_{nu+2})^i."""
    if dimension < 4:
        raise ValueError(f'sum-trivariate needs d >= 4, got {dimension}')

    def trivariate(x: np.ndarray) -> np.ndarray:
        products = x[:, :-2] * x[:, 1:-1] * x[:, 2:]
        return np.sum(1.0 + products + products**2, axis=1)

    return CountingOracle(trivariate, dimension, name='sum-trivariate')


@dataclass(frozen=True)
class Benchmark:
    name: str
    oracle: CountingOracle
    measure: ProductMeasure


FUNCTION_REGISTRY = {
    'henon-heiles': {
        'display_name': 'henon-heiles',
        'description': 'Henon-Heiles potential in dimension d under the standard Gaussian measure',
        'input_schema': HenonHeilesArgs.model_json_schema(),
        'args_model': HenonHeilesArgs,
        'function': lambda args: henon_heiles(args.dimension, args.sigma),
        'measure': lambda args: ProductMeasure.gaussian(args.dimension),
    },
    'anisotropic6': {
        'display_name': 'anisotropic6',
        'description': 'Rational function of four of six variables, uniform measure on [-1, 1]^6',
        'input_schema': Anisotropic6Args.model_json_schema(),
        'args_model': Anisotropic6Args,
        'function': lambda args: anisotropic6(),
        'measure': lambda args: ProductMeasure.uniform(6),
    },
    'sum-bivariate': {
        'display_name': 'sum-bivariate',
        'description': 'Sum of bivariate functions of separated variable pairs on [-1, 1]^d',
        'input_schema': SumBivariateArgs.model_json_schema(),
        'args_model': SumBivariateArgs,
        'function': lambda args: sum_bivariate(args.dimension),
        'measure': lambda args: ProductMeasure.uniform(args.dimension),
    },
    'sum-trivariate': {
        'display_name': 'sum-trivariate',
        'description': 'Sum of trivariate functions of interlaced variable triples on [-1, 1]^d',
        'input_schema': SumTrivariateArgs.model_json_schema(),
        'args_model': SumTrivariateArgs,
        'function': lambda args: sum_trivariate(args.dimension),
        'measure': lambda args: ProductMeasure.uniform(args.dimension),
    },
}

# Lower-cased display names and Python-style names both resolve to a registry key.
FUNCTION_LOOKUP = {
    **{info['display_name'].lower(): key for key, info in FUNCTION_REGISTRY.items()},
    **{key.replace('-', '_'): key for key in FUNCTION_REGISTRY},
}


def resolve_function(name: str) -> str:
    """Registry key for a function name, accepting display names and snake_case."""
    key = FUNCTION_LOOKUP.get(name.strip().lower())
    if key is None:
        raise ValueError(
            f"Unknown benchmark function '{name}'. "
            f'Available functions: {sorted(FUNCTION_REGISTRY)}'
        )
    return key


def build_args(name: str, dimension: Optional[int] = None, **kwargs: Any) -> baseFunctionArgs:
    """Validated argument model of a function; ``dimension=None`` keeps its default."""
    info = FUNCTION_REGISTRY[resolve_function(name)]
    if dimension is not None:
        kwargs['dimension'] = dimension
    return info['args_model'](**kwargs)


def make_benchmark(name: str, dimension: Optional[int] = None, **kwargs: Any) -> Benchmark:
    """Fresh oracle (with its own call counter) and measure for a registered function."""
    key = resolve_function(name)
    info = FUNCTION_REGISTRY[key]
    args = build_args(key, dimension, **kwargs)
    logger.debug(f'Building benchmark {info["display_name"]} with {args.model_dump()}')
    return Benchmark(name=key, oracle=info['function'](args), measure=info['measure'](args))
