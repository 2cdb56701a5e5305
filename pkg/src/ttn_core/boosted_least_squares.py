# SPDX-License-Identifier: Apache-2.0

"""Boosted optimal weighted least-squares projection onto a feature space.

A sample is drawn from the optimal measure M times, the draw whose empirical
Gram matrix is closest to the identity is kept (rounds repeat until
||G - I||_2 <= delta), and points are then removed greedily while the
criterion holds.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from .errors import SingularGramError, StabilityError
from .measures_bases import FeatureSpace
from .optimal_sampling import draw_optimal_sample


logger = logging.getLogger(__name__)


class StabilityParams(BaseModel):
    repetitions: int = Field(
        default=100, ge=1, description='Number M of candidate samples drawn per round'
    )
    delta: float = Field(
        default=0.9, gt=0.0, lt=1.0, description='Stability threshold on ||G - I||_2'
    )
    eta: float = Field(
        default=0.01, gt=0.0, lt=1.0, description='Failure probability in the sample-count rule'
    )
    keep_fraction: Optional[float] = Field(
        default=None,
        gt=0.0,
        le=1.0,
        description='Minimal fraction p_r of points kept by greedy removal (default m/n)',
    )
    max_rounds: int = Field(
        default=100, ge=1, description='Rounds of M draws before a sample is declared unstable'
    )


@dataclass(frozen=True)
class WeightedSampleSet:
    """Points x^i, weights w(x^i) and basis values phi_j(x^i) of one projection sample."""

    points: np.ndarray
    weights: np.ndarray
    features: np.ndarray
    space_label: str
    certificate: float

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def gram(self) -> np.ndarray:
        return _gram(self.features, self.weights)


def min_sample_count(m: int, delta: float = 0.9, eta: float = 0.01) -> int:
    """Smallest n >= (-delta + (1 + delta) ln(1 + delta)) m ln(2m / eta), floored at m."""
    if m < 1:
        raise ValueError(f'space dimension must be positive, got {m}')
    factor = -delta + (1.0 + delta) * math.log(1.0 + delta)
    return max(math.ceil(factor * m * math.log(2.0 * m / eta)), m)


def _gram(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return features.T @ (weights[:, None] * features) / features.shape[0]


def stability_criterion(gram: np.ndarray) -> float:
    """Spectral distance ||G - I||_2 of a symmetric matrix to the identity."""
    return float(np.max(np.abs(np.linalg.eigvalsh(gram) - 1.0)))


def empirical_gram(space: FeatureSpace, sample: WeightedSampleSet) -> np.ndarray:
    """G_jk = (1/z) sum_i w(x^i) phi_j(x^i) phi_k(x^i)."""
    features = _features(space, sample)
    return _gram(features, sample.weights)


def _features(space: FeatureSpace, sample: WeightedSampleSet) -> np.ndarray:
    if sample.features is not None and sample.features.shape == (sample.size, space.dimension):
        return sample.features
    return space.evaluate(sample.points)


def optimal_weights(features: np.ndarray) -> np.ndarray:
    """w(x) = m / sum_j phi_j(x)^2, from basis values of shape ``(n, m)``."""
    return features.shape[1] / np.sum(features**2, axis=1)


def draw_stable_sample(
    space: FeatureSpace, n: int, params: StabilityParams, rng: np.random.Generator
) -> WeightedSampleSet:
    """Select, among M i.i.d. n-samples from the optimal measure, the one minimizing ||G - I||_2.

    Rounds of M draws repeat until the selected sample satisfies the stability
    condition.

    Raises:
        StabilityError: no stable sample within ``params.max_rounds`` rounds.
    """
    m = space.dimension
    if n < m:
        raise ValueError(f'sample size {n} is smaller than the dimension {m} of {space.label}')
    repetitions = params.repetitions
    best_overall = math.inf
    for round_index in range(1, params.max_rounds + 1):
        points = draw_optimal_sample(space, rng, repetitions * n)
        features = space.evaluate(points)
        weights = optimal_weights(features)
        candidate_features = features.reshape(repetitions, n, m)
        candidate_weights = weights.reshape(repetitions, n)
        grams = np.einsum(
            'cni,cn,cnj->cij', candidate_features, candidate_weights, candidate_features
        ) / n
        criteria = np.max(np.abs(np.linalg.eigvalsh(grams) - 1.0), axis=1)
        best = int(np.argmin(criteria))
        best_overall = min(best_overall, float(criteria[best]))
        if criteria[best] <= params.delta:
            logger.debug(
                f'Stable sample of size {n} for {space.label} after {round_index} round(s), '
                f'||G - I||_2 = {criteria[best]:.3f}'
            )
            rows = slice(best * n, (best + 1) * n)
            return WeightedSampleSet(
                points=points[rows],
                weights=weights[rows],
                features=features[rows],
                space_label=space.label,
                certificate=float(criteria[best]),
            )
    raise StabilityError(space.label, best_overall, params.max_rounds)


def greedy_keep(
    features: np.ndarray, weights: np.ndarray, delta: float, z_min: int
) -> np.ndarray:
    """Sorted indices of the points kept by greedy removal (see ``greedy_subsample``)."""
    m = features.shape[1]
    floor = max(z_min, m)
    keep = np.arange(features.shape[0])
    while keep.size > floor:
        kept_features = features[keep]
        kept_weights = weights[keep]
        z = keep.size
        # Exact scaled Gram z * G of the current points; candidates are rank-one downdates.
        scaled = kept_features.T @ (kept_weights[:, None] * kept_features)
        outer = np.einsum('ni,nj->nij', kept_features, kept_features)
        downdated = (scaled[None, :, :] - kept_weights[:, None, None] * outer) / (z - 1)
        criteria = np.max(np.abs(np.linalg.eigvalsh(downdated) - 1.0), axis=1)
        best = int(np.argmin(criteria))
        if criteria[best] > delta:
            break
        keep = np.delete(keep, best)
    return keep


def greedy_subsample(sample: WeightedSampleSet, delta: float, z_min: int) -> WeightedSampleSet:
    """Remove points one at a time, each time the one keeping ||G - I||_2 smallest.

    Stops when the size reaches max(z_min, m) or when every removal would
    break ||G - I||_2 <= delta.
    """
    keep = greedy_keep(sample.features, sample.weights, delta, z_min)
    if keep.size == sample.size:
        return sample
    logger.debug(
        f'Greedy removal kept {keep.size} of {sample.size} points for {sample.space_label}'
    )
    return replace(
        sample,
        points=sample.points[keep],
        weights=sample.weights[keep],
        features=sample.features[keep],
        certificate=stability_criterion(_gram(sample.features[keep], sample.weights[keep])),
    )


def project(
    space: FeatureSpace,
    sample: WeightedSampleSet,
    values: np.ndarray,
    delta: float = 0.9,
) -> np.ndarray:
    """Coefficients of the weighted least-squares projection of ``values`` onto ``space``.

    ``values`` is ``(z,)`` or ``(z, k)`` for k simultaneous right-hand sides.

    Raises:
        SingularGramError: the sample does not satisfy ||G - I||_2 <= delta.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != sample.size:
        raise ValueError(f'{values.shape[0]} values for a sample of {sample.size} points')
    features = _features(space, sample)
    criterion = stability_criterion(_gram(features, sample.weights))
    if criterion > delta:
        raise SingularGramError(
            f'Gram matrix of the sample for {space.label} is not stable: '
            f'||G - I||_2 = {criterion:.4g} > {delta}'
        )
    root_weights = np.sqrt(sample.weights)
    scaled_values = values * (root_weights if values.ndim == 1 else root_weights[:, None])
    coefficients, *_ = np.linalg.lstsq(root_weights[:, None] * features, scaled_values, rcond=None)
    return coefficients


def keep_floor(m: int, n: int, params: StabilityParams) -> int:
    """z_min = max(ceil(p_r n), m), with p_r defaulting to m / n."""
    fraction = params.keep_fraction if params.keep_fraction is not None else m / n
    return max(math.ceil(fraction * n - 1e-12), m)


def boosted_sample(
    space: FeatureSpace,
    params: StabilityParams,
    rng: np.random.Generator,
    n: Optional[int] = None,
) -> WeightedSampleSet:
    """Stable sample of size n (default min_sample_count(m)) reduced by greedy removal."""
    m = space.dimension
    if n is None:
        n = min_sample_count(m, params.delta, params.eta)
    sample = draw_stable_sample(space, n, params, rng)
    return greedy_subsample(sample, params.delta, keep_floor(m, n, params))


@dataclass(frozen=True)
class NestedSample:
    """Sample of a larger space built on top of a sample of a smaller one.

    The first ``reused.size`` points of ``sample`` are the points ``reused`` of
    the previous sample, in order; the remaining points are new.
    """

    sample: WeightedSampleSet
    reused: np.ndarray

    @property
    def added(self) -> int:
        return self.sample.size - self.reused.size


def nested_boosted_sample(
    space: FeatureSpace,
    previous: WeightedSampleSet,
    params: StabilityParams,
    rng: np.random.Generator,
) -> NestedSample:
    """Stable sample of ``space`` that keeps the points of ``previous`` and adds few new ones.

    For k = max(m - z, 1), ... new points (z the size of ``previous``), M
    candidate sets of k points are drawn from the optimal measure of ``space``
    and the union with ``previous`` minimizing ||G - I||_2 is kept as soon as it
    is stable. Weights are recomputed for ``space``. The union is then reduced
    by greedy removal. When no extension up to min_sample_count(m) points is
    stable, a fresh boosted sample is drawn and nothing is reused.
    """
    m = space.dimension
    z = previous.size
    n = max(min_sample_count(m, params.delta, params.eta), z + 1)
    repetitions = params.repetitions
    base_features = space.evaluate(previous.points)
    for k in range(max(m - z, 1), n - z + 1):
        points = draw_optimal_sample(space, rng, repetitions * k)
        features = space.evaluate(points).reshape(repetitions, k, m)
        union = np.concatenate(
            [np.broadcast_to(base_features, (repetitions, z, m)), features], axis=1
        )
        weights = m / np.sum(union**2, axis=2)
        grams = np.einsum('cni,cn,cnj->cij', union, weights, union) / (z + k)
        criteria = np.max(np.abs(np.linalg.eigvalsh(grams) - 1.0), axis=1)
        best = int(np.argmin(criteria))
        if criteria[best] > params.delta:
            continue
        union_points = np.concatenate([previous.points, points[best * k : (best + 1) * k]])
        keep = greedy_keep(union[best], weights[best], params.delta, keep_floor(m, z + k, params))
        kept_features = union[best][keep]
        kept_weights = weights[best][keep]
        logger.debug(
            f'Extended a sample of {z} points by {k} for {space.label}, '
            f'greedy removal kept {keep.size}'
        )
        sample = WeightedSampleSet(
            points=union_points[keep],
            weights=kept_weights,
            features=np.ascontiguousarray(kept_features),
            space_label=space.label,
            certificate=stability_criterion(_gram(kept_features, kept_weights)),
        )
        return NestedSample(sample=sample, reused=keep[keep < z])
    logger.debug(f'No stable extension of a {z}-point sample for {space.label}, drawing afresh')
    sample = boosted_sample(space, params, rng)
    return NestedSample(sample=sample, reused=np.empty(0, dtype=int))
