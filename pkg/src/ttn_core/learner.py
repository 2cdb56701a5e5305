# SPDX-License-Identifier: Apache-2.0

"""Leaves-to-root construction of a tree tensor network from point evaluations."""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .boosted_least_squares import (
    StabilityParams,
    WeightedSampleSet,
    boosted_sample,
    nested_boosted_sample,
    project,
)
from .dimension_tree import DimensionTree, nodes_by_decreasing_level
from .errors import LearningError
from .measures_bases import (
    FeatureSpace,
    PolynomialSpace,
    ProductMeasure,
    SubspaceBasis,
    TensorProductSpace,
    polynomial_sequence,
    polynomial_space_for,
)
from .oracle import CountingOracle
from .principal_subspaces import (
    PrincipalSubspace,
    adaptive_principal_subspace,
    evaluate_columns,
    principal_subspace,
)
from .tensor_network import TreeTensorNetwork
from .utils import sorted_variables


logger = logging.getLogger(__name__)

WORKERS_ENV = 'TTN_APPROXIMATION_WORKERS'


def _default_workers() -> int:
    try:
        return max(int(os.environ.get(WORKERS_ENV, '1')), 1)
    except ValueError:
        logger.warning(f'Ignoring non-integer {WORKERS_ENV}={os.environ[WORKERS_ENV]!r}')
        return 1


class C1Mode(str, Enum):
    HEURISTIC = 'heuristic'
    FORMAL = 'formal'


class LearnerConfig(BaseModel):
    tolerance: float = Field(default=1e-6, gt=0.0, description='Global relative tolerance')
    stability: StabilityParams = Field(
        default_factory=StabilityParams, description='Boosted least-squares parameters'
    )
    sampling_factor: int = Field(
        default=3, ge=1, description='k_PCA: at most k_PCA * m_alpha columns per node'
    )
    adaptive_pca: bool = Field(
        default=True, description='Grow columns and ranks by leave-one-out validation'
    )
    adaptive_basis: bool = Field(
        default=False, description='Select the leaf polynomial degree per variable'
    )
    degree: int = Field(default=3, ge=0, description='Leaf degree when adaptive_basis is off')
    min_degree: int = Field(default=1, ge=0, description='First degree of adaptive sequences')
    max_degree: int = Field(default=15, ge=0, description='Last degree of adaptive sequences')
    c1_mode: C1Mode = Field(
        default=C1Mode.HEURISTIC, description='Constant C1 used by the tolerance budgets'
    )
    gamma_with_keep_fraction: bool = Field(
        default=False, description='Include the p_r factor in the formal gamma'
    )
    level_cap: int = Field(default=3, ge=0, description='Levels above this share one budget')
    basis_tolerance_floor: float = Field(
        default=1e-12,
        ge=0.0,
        description='Lower bound on the leaf-basis criterion threshold (round-off level)',
    )
    pca_tolerance_floor: float = Field(
        default=1e-12,
        ge=0.0,
        description='Lower bound on the per-node PCA tolerance (round-off level)',
    )
    workers: int = Field(
        default_factory=_default_workers, ge=1, description='Threads for same-level nodes'
    )

    def gamma(self) -> float:
        params = self.stability
        gamma = params.repetitions / (
            (1.0 - params.delta) * (1.0 - params.eta**params.repetitions)
        )
        if self.gamma_with_keep_fraction:
            gamma *= params.keep_fraction if params.keep_fraction is not None else 1.0
        return gamma

    def c1(self) -> float:
        if self.c1_mode == C1Mode.FORMAL:
            return 2.0 * (self.gamma() + 1.0)
        params = self.stability
        return 2.0 * (1.0 + 1.0 / ((1.0 - params.delta) * (1.0 - params.eta)))


class NodeReport(BaseModel):
    node: list[int] = Field(description='Sorted variables of the node')
    level: int = Field(description='Level in the tree (root is 0)')
    rank: int = Field(description='Rank r_alpha (1 at the root)')
    dimension: int = Field(description='Dimension m_alpha of the feature space')
    sample_size: int = Field(description='Projection sample size z_alpha')
    columns: int = Field(default=1, description='Number z_c of complement points')
    evaluations: int = Field(description='Function evaluations N_alpha spent at this node')
    loo_error: Optional[float] = Field(default=None, description='Final leave-one-out ratio')
    certificate: float = Field(description='||G - I||_2 of the projection sample')
    tolerance_pca: Optional[float] = Field(default=None, description='PCA tolerance budget')
    tolerance_dis: Optional[float] = Field(default=None, description='Discretization budget')
    degree: Optional[int] = Field(default=None, description='Selected leaf degree')
    tolerance_met: bool = Field(default=True, description='False if the budget was not met')
    degenerate: bool = Field(default=False, description='True for an all-zero matrix')
    degree_exhausted: bool = Field(
        default=False, description='True if the leaf sequence ran out before the criterion held'
    )


class LearnReport(BaseModel):
    nodes: list[NodeReport] = Field(default_factory=list)
    evaluations: int = Field(default=0, description='n: evaluations spent on the approximation')
    optimization_evaluations: int = Field(
        default=0, description='n_optim: evaluations spent on tree selection'
    )
    total_evaluations: int = Field(default=0, description='n_total = n + n_optim')
    storage: int = Field(default=0, description='Storage complexity of the network')
    ranks: dict[str, int] = Field(default_factory=dict)
    tree: list[list[int]] = Field(default_factory=list)
    pairings: list[list[list[int]]] = Field(
        default_factory=list, description='Pairing chosen at each level of tree adaptation'
    )
    pairing_costs: list[list[int]] = Field(
        default_factory=list, description='Costs of the pairings visited at each level'
    )
    tolerance_met: bool = True
    degenerate: bool = False
    wall_time: float = Field(default=0.0, description='Seconds; ignored by equality')

    def __eq__(self, other):
        if not isinstance(other, LearnReport):
            return NotImplemented
        return self.model_dump(exclude={'wall_time'}) == other.model_dump(exclude={'wall_time'})

    def node(self, variables) -> Optional[NodeReport]:
        wanted = sorted(variables)
        return next((n for n in self.nodes if n.node == wanted), None)


@dataclass(frozen=True)
class NodeBudget:
    pca: float
    dis: float


def level_budget(
    tolerance: float, level: int, node_count: int, dimension: int, config: LearnerConfig
) -> NodeBudget:
    """Budgets (eps_pca, eps_dis) of a node at ``level`` in a tree with ``node_count`` nodes."""
    scale = 2.0 * config.c1()
    capped = min(level, config.level_cap)
    pca = tolerance / math.sqrt(scale**capped * max(node_count - 1, 1))
    dis = tolerance / math.sqrt(0.5 * scale ** (capped + 1) * dimension)
    return NodeBudget(pca=pca, dis=dis)


def floored_budget(budget: NodeBudget, config: LearnerConfig) -> NodeBudget:
    """Budget actually used at a node: neither tolerance goes below its round-off floor."""
    return NodeBudget(
        pca=max(budget.pca, config.pca_tolerance_floor),
        dis=max(budget.dis, config.basis_tolerance_floor),
    )


def tolerance_budget(
    tolerance: float, tree: DimensionTree, config: LearnerConfig
) -> dict[frozenset[int], NodeBudget]:
    """Per-node (eps_pca, eps_dis) with the heuristic (or formal) C1 and the level cap."""
    return {
        node: level_budget(tolerance, tree.level(node), len(tree), tree.dimension, config)
        for node in tree.nodes
    }


def leaf_space_sequences(
    measure: ProductMeasure, config: LearnerConfig
) -> dict[int, list[PolynomialSpace]]:
    """Candidate leaf spaces per variable: a degree sequence, or the single fixed degree."""
    sequences = {}
    for variable in range(1, measure.dimension + 1):
        marginal = measure.marginal(variable)
        if config.adaptive_basis:
            sequences[variable] = polynomial_sequence(
                marginal, variable, config.max_degree, config.min_degree
            )
        else:
            sequences[variable] = [polynomial_space_for(marginal, config.degree, variable)]
    return sequences


def measure_of(leaf_spaces: Mapping[int, Sequence[PolynomialSpace]]) -> ProductMeasure:
    return ProductMeasure(
        marginals=tuple(leaf_spaces[v][0].marginal for v in sorted(leaf_spaces))
    )


def leaf_criterion(coefficients: np.ndarray) -> float:
    """|a_last| / ||a||, zero for a zero vector."""
    coefficients = np.ravel(coefficients)
    norm = float(np.linalg.norm(coefficients))
    return abs(float(coefficients[-1])) / norm if norm > 0 else 0.0


@dataclass(frozen=True)
class LeafAdaptation:
    index: int
    space: PolynomialSpace
    sample: WeightedSampleSet
    coefficients: np.ndarray
    complement_point: np.ndarray
    criterion: float
    evaluations: int
    exhausted: bool


def adapt_leaf_basis(
    oracle: CountingOracle,
    variable: int,
    sequence: Sequence[PolynomialSpace],
    tolerance: float,
    params: StabilityParams,
    rng: np.random.Generator,
    measure: ProductMeasure,
    complement_point: Optional[np.ndarray] = None,
    start: int = 0,
) -> LeafAdaptation:
    """First space of ``sequence`` where u(., x_c) has |a_last| / ||a|| <= tolerance.

    One complement point x_c is drawn (unless given) and kept for every
    candidate space. Samples are nested: the sample of a space starts from the
    points of the previous one, whose values are reused, so only new points
    are evaluated. When the sequence is exhausted the last space is returned
    flagged ``exhausted``.
    """
    if complement_point is None:
        complement = measure.complement([variable])
        complement_point = measure.restrict(complement).sample(rng, 1)[0]
    complement_point = np.asarray(complement_point, dtype=float)
    evaluations = 0
    adaptation = None
    sample = None
    values = np.empty(0)
    for index in range(start, len(sequence)):
        space = sequence[index]
        if sample is None:
            sample = boosted_sample(space, params, rng)
            reused = np.empty(0)
        else:
            nested = nested_boosted_sample(space, sample, params, rng)
            sample = nested.sample
            reused = values[nested.reused]
        new_points = sample.points[reused.size :]
        if new_points.shape[0] > 0:
            new_values = evaluate_columns(
                oracle, [variable], new_points, complement_point[None, :]
            )[:, 0]
            evaluations += new_values.size
            values = np.concatenate([reused, new_values])
        else:
            values = reused
        coefficients = project(space, sample, values, params.delta)
        adaptation = LeafAdaptation(
            index=index,
            space=space,
            sample=sample,
            coefficients=coefficients,
            complement_point=complement_point,
            criterion=leaf_criterion(coefficients),
            evaluations=evaluations,
            exhausted=False,
        )
        if adaptation.criterion <= tolerance:
            return adaptation
    if adaptation is None:
        raise ValueError(f'empty space sequence for variable {variable} from index {start}')
    logger.warning(
        f'Leaf {variable}: degree sequence exhausted at {adaptation.space.label} '
        f'(criterion {adaptation.criterion:.3g} > {tolerance:.3g})'
    )
    return replace(adaptation, exhausted=True)


class _CriterionViolated(Exception):
    def __init__(self, complement_point: np.ndarray):
        self.complement_point = complement_point


@dataclass(frozen=True)
class NodeResult:
    basis: SubspaceBasis
    report: NodeReport


def _run_pca(
    oracle: CountingOracle,
    node: frozenset[int],
    space: FeatureSpace,
    sample: WeightedSampleSet,
    budget: NodeBudget,
    config: LearnerConfig,
    measure: ProductMeasure,
    rng: np.random.Generator,
    initial_columns: Optional[tuple[np.ndarray, np.ndarray]] = None,
    column_check: Optional[Callable[[np.ndarray, np.ndarray], None]] = None,
) -> PrincipalSubspace:
    if config.adaptive_pca:
        return adaptive_principal_subspace(
            oracle,
            node,
            space,
            sample,
            budget.pca,
            config.sampling_factor,
            measure,
            rng,
            delta=config.stability.delta,
            initial_columns=initial_columns,
            column_check=column_check,
        )
    return principal_subspace(
        oracle,
        node,
        space,
        sample,
        budget.pca,
        measure,
        rng,
        delta=config.stability.delta,
        initial_columns=initial_columns,
        column_check=column_check,
    )


def _learn_leaf(
    oracle: CountingOracle,
    node: frozenset[int],
    level: int,
    sequence: Sequence[PolynomialSpace],
    budget: NodeBudget,
    config: LearnerConfig,
    measure: ProductMeasure,
    rng: np.random.Generator,
) -> NodeResult:
    (variable,) = node
    if not config.adaptive_basis or len(sequence) == 1:
        space = sequence[0]
        sample = boosted_sample(space, config.stability, rng)
        subspace = _run_pca(oracle, node, space, sample, budget, config, measure, rng)
        return _node_result(node, level, space, sample, subspace, budget, subspace.evaluations)

    threshold = budget.dis
    adaptation = adapt_leaf_basis(
        oracle, variable, sequence, threshold, config.stability, rng, measure
    )
    evaluations = adaptation.evaluations
    while True:
        spent = 0
        sample = adaptation.sample

        def check(point: np.ndarray, coefficients: np.ndarray):
            nonlocal spent
            spent += sample.size
            if not adaptation.exhausted and leaf_criterion(coefficients) > threshold:
                raise _CriterionViolated(point)

        try:
            subspace = _run_pca(
                oracle,
                node,
                adaptation.space,
                sample,
                budget,
                config,
                measure,
                rng,
                initial_columns=(
                    adaptation.complement_point[None, :],
                    adaptation.coefficients[:, None],
                ),
                column_check=check,
            )
        except _CriterionViolated as violation:
            evaluations += spent
            logger.info(
                f'Leaf {variable}: degree {adaptation.space.degree} too low for a new column, '
                f'adapting again'
            )
            adaptation = adapt_leaf_basis(
                oracle,
                variable,
                sequence,
                threshold,
                config.stability,
                rng,
                measure,
                complement_point=violation.complement_point,
                start=adaptation.index + 1,
            )
            evaluations += adaptation.evaluations
            continue
        evaluations += spent
        result = _node_result(
            node, level, adaptation.space, sample, subspace, budget, evaluations
        )
        result.report.degree_exhausted = adaptation.exhausted
        return result


def _node_result(
    node: frozenset[int],
    level: int,
    space: FeatureSpace,
    sample: WeightedSampleSet,
    subspace: PrincipalSubspace,
    budget: NodeBudget,
    evaluations: int,
) -> NodeResult:
    degree = space.degree if isinstance(space, PolynomialSpace) else None
    report = NodeReport(
        node=list(sorted_variables(node)),
        level=level,
        rank=subspace.rank,
        dimension=space.dimension,
        sample_size=sample.size,
        columns=subspace.columns,
        evaluations=evaluations,
        loo_error=subspace.loo_error,
        certificate=sample.certificate,
        tolerance_pca=budget.pca,
        tolerance_dis=budget.dis if degree is not None else None,
        degree=degree,
        tolerance_met=subspace.tolerance_met,
        degenerate=subspace.degenerate,
    )
    return NodeResult(basis=SubspaceBasis(node, space, subspace.basis), report=report)


def learn_node(
    oracle: CountingOracle,
    node: frozenset[int],
    level: int,
    children: Sequence[SubspaceBasis],
    leaf_sequence: Optional[Sequence[PolynomialSpace]],
    budget: NodeBudget,
    config: LearnerConfig,
    measure: ProductMeasure,
    rng: np.random.Generator,
) -> NodeResult:
    """Principal subspace of a non-root node, over its leaf space or its children product."""
    budget = floored_budget(budget, config)
    if not children:
        return _learn_leaf(oracle, node, level, leaf_sequence, budget, config, measure, rng)
    space = TensorProductSpace(children)
    sample = boosted_sample(space, config.stability, rng)
    subspace = _run_pca(oracle, node, space, sample, budget, config, measure, rng)
    return _node_result(node, level, space, sample, subspace, budget, subspace.evaluations)


def learn_root(
    oracle: CountingOracle,
    children: Sequence[SubspaceBasis],
    config: LearnerConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, NodeReport]:
    """Boosted least-squares projection of u onto the product of the root's children."""
    space = TensorProductSpace(children)
    sample = boosted_sample(space, config.stability, rng)
    values = oracle(sample.points)
    coefficients = project(space, sample, values, config.stability.delta)
    report = NodeReport(
        node=list(space.variables),
        level=0,
        rank=1,
        dimension=space.dimension,
        sample_size=sample.size,
        columns=1,
        evaluations=sample.size,
        certificate=sample.certificate,
    )
    logger.info(
        f'Root: projection on {space.dimension} product functions from {sample.size} points'
    )
    return coefficients, report


def run_parallel(tasks: list[Callable[[], Any]], workers: int) -> list[Any]:
    if workers <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=min(workers, len(tasks))) as executor:
        futures = [executor.submit(task) for task in tasks]
        return [future.result() for future in futures]


def _partial_report(reports: list[NodeReport], started: float) -> LearnReport:
    return LearnReport(
        nodes=list(reports),
        evaluations=sum(r.evaluations for r in reports),
        total_evaluations=sum(r.evaluations for r in reports),
        tolerance_met=all(r.tolerance_met for r in reports),
        degenerate=any(r.degenerate for r in reports),
        wall_time=time.perf_counter() - started,
    )


def learn(
    oracle: CountingOracle,
    tree: DimensionTree,
    leaf_spaces: Mapping[int, Sequence[PolynomialSpace]],
    config: LearnerConfig,
    rng: np.random.Generator,
) -> tuple[TreeTensorNetwork, LearnReport]:
    """Learn a tree tensor network approximating ``oracle`` on ``tree``.

    Nodes are processed by decreasing level; nodes of one level run
    concurrently on ``config.workers`` threads, each with its own RNG stream
    spawned from ``rng`` in a fixed order.

    Raises:
        LearningError: a node failed; carries the node and the partial report.
    """
    started = time.perf_counter()
    measure = measure_of(leaf_spaces)
    budgets = tolerance_budget(config.tolerance, tree, config)
    bases: dict[frozenset[int], SubspaceBasis] = {}
    reports: list[NodeReport] = []

    levels: dict[int, list[frozenset[int]]] = {}
    for node in nodes_by_decreasing_level(tree):
        levels.setdefault(tree.level(node), []).append(node)

    for level in sorted(levels, reverse=True):
        group = levels[level]
        streams = rng.spawn(len(group))

        def task(node: frozenset[int], stream: np.random.Generator) -> Callable[[], NodeResult]:
            def run() -> NodeResult:
                try:
                    return learn_node(
                        oracle,
                        node,
                        level,
                        [bases[c] for c in tree.children(node)],
                        leaf_spaces[min(node)] if tree.is_leaf(node) else None,
                        budgets[node],
                        config,
                        measure,
                        stream,
                    )
                except LearningError:
                    raise
                except Exception as e:
                    raise LearningError(
                        sorted_variables(node), e, _partial_report(reports, started)
                    ) from e

            return run

        results = run_parallel(
            [task(node, stream) for node, stream in zip(group, streams)], config.workers
        )
        for node, result in zip(group, results):
            bases[node] = result.basis
            reports.append(result.report)

    (root_stream,) = rng.spawn(1)
    try:
        root_tensor, root_report = learn_root(
            oracle, [bases[c] for c in tree.children(tree.root)], config, root_stream
        )
    except Exception as e:
        raise LearningError(
            sorted_variables(tree.root), e, _partial_report(reports, started)
        ) from e
    reports.append(root_report)

    tensors = {node: basis.coefficients for node, basis in bases.items()}
    tensors[tree.root] = root_tensor
    leaf_bases = {min(leaf): bases[leaf].space for leaf in tree.leaves}
    ttn = TreeTensorNetwork(tree, leaf_bases, tensors)
    report = _partial_report(reports, started)
    report.storage = ttn.storage_complexity()
    report.ranks = ttn.rank_document()
    report.tree = tree.to_document()
    report.wall_time = time.perf_counter() - started
    if not report.tolerance_met:
        logger.warning('Some nodes did not meet their tolerance budget')
    logger.info(
        f'Learned network with storage {report.storage} from {report.evaluations} evaluations '
        f'in {report.wall_time:.2f}s'
    )
    return ttn, report
