# SPDX-License-Identifier: Apache-2.0

"""Selection of the dimension tree by pairing nodes level by level.

Ranks of candidate nodes are estimated from raw evaluation matrices at a
coarse tolerance; pairings of the current nodes are improved by random swaps
that are kept whenever the local storage cost does not increase.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .dimension_tree import DimensionTree, balanced_binary, validate
from .errors import LearningError
from .learner import (
    LearnerConfig,
    LearnReport,
    NodeReport,
    NodeResult,
    learn,
    learn_node,
    learn_root,
    level_budget,
    measure_of,
    run_parallel,
)
from .measures_bases import PolynomialSpace, ProductMeasure, SubspaceBasis
from .oracle import CountingOracle
from .principal_subspaces import evaluate_columns, loo_error
from .tensor_network import TreeTensorNetwork
from .utils import sorted_variables


logger = logging.getLogger(__name__)

Node = frozenset[int]


class TreeAdaptationParams(BaseModel):
    coarse_tolerance: float = Field(
        default=1e-2, gt=0.0, description='Tolerance eps_c of the rank estimates'
    )
    alpha_cap: int = Field(default=30, ge=1, description='Points n_alpha drawn in x_alpha')
    complement_cap: int = Field(
        default=30, ge=1, description='Maximal number n_c of complement points'
    )
    min_columns: int = Field(
        default=10, ge=2, description='Complement points drawn before a rank estimate may stop'
    )
    gamma_first: float = Field(default=6.0, ge=0.0, description='Exponent of the first draw')
    gamma_second: float = Field(default=6.0, ge=0.0, description='Exponent of the second draw')
    iterations: Optional[int] = Field(
        default=None, ge=0, description='Swap proposals n_P per level (default 2d)'
    )


@dataclass(frozen=True)
class RankEstimate:
    node: Node
    rank: int
    evaluations: int
    coarse_tolerance: float
    coarse: bool = False


def _label(node: Node) -> list[int]:
    return list(sorted_variables(node))


def estimate_rank(
    oracle: CountingOracle,
    alpha: Sequence[int],
    coarse_tolerance: float,
    alpha_cap: int,
    complement_cap: int,
    measure: ProductMeasure,
    rng: np.random.Generator,
    min_columns: int = 10,
) -> RankEstimate:
    """Estimate the eps_c-rank of u across (alpha, complement) from raw evaluations.

    ``alpha_cap`` points are drawn from mu_alpha and complement points are added
    one by one. After each new column of the evaluation matrix B, the rank
    grows while the square root of the leave-one-out ratio exceeds eps_c.
    Columns keep coming until the criterion holds with at least
    max(min_columns, r + 2) columns (or the complement cap is reached); the
    result is the minimal rank meeting eps_c on the final matrix.
    """
    if coarse_tolerance <= 0:
        raise ValueError(f'coarse tolerance must be positive, got {coarse_tolerance}')
    if alpha_cap < 1 or complement_cap < 1:
        raise ValueError('rank estimation caps must be at least 1')
    if min_columns < 2:
        raise ValueError(f'a rank estimate needs at least 2 columns, got {min_columns}')
    alpha = frozenset(alpha)
    alpha_points = measure.restrict(alpha).sample(rng, alpha_cap)
    complement = measure.complement(alpha)
    complement_measure = measure.restrict(complement)
    columns = np.empty((alpha_cap, 0))
    rank, met = 1, False
    while columns.shape[1] < complement_cap:
        point = complement_measure.sample(rng, 1)
        values = evaluate_columns(
            oracle, alpha, alpha_points, point, first_column=columns.shape[1]
        )
        columns = np.hstack([columns, values])
        z = columns.shape[1]
        if z < 2:
            continue
        limit = min(alpha_cap, z - 1)
        rank = min(rank, limit)
        error = math.sqrt(loo_error(columns, rank))
        while error > coarse_tolerance and rank < limit:
            rank += 1
            error = math.sqrt(loo_error(columns, rank))
        met = error <= coarse_tolerance
        # Accepted only with spare columns beyond the rank.
        if met and z >= min(max(min_columns, rank + 2), complement_cap):
            break
    evaluations = columns.size
    if columns.shape[1] >= 2:
        for smaller in range(1, rank):
            if math.sqrt(loo_error(columns, smaller)) <= coarse_tolerance:
                rank = smaller
                break
    if not met:
        logger.debug(f'Rank of {_label(alpha)} limited by the caps at {rank}')
    logger.debug(f'Rank estimate of {_label(alpha)}: {rank} ({evaluations} evaluations)')
    return RankEstimate(
        node=alpha,
        rank=rank,
        evaluations=evaluations,
        coarse_tolerance=coarse_tolerance,
        coarse=not met,
    )


def _members_of(parent: Node, members: Sequence[Node]) -> list[Node]:
    return [m for m in members if m <= parent]


def pairing_cost(
    pairing: Sequence[Node], members: Sequence[Node], ranks: Mapping[Node, int]
) -> int:
    """Local cost sum over parents beta of r_beta times the product of its members' ranks.

    A member passed through unpaired creates no node and costs nothing.
    """
    total = 0
    for parent in pairing:
        children = _members_of(parent, members)
        if len(children) == 1 and children[0] == parent:
            continue
        missing = [_label(n) for n in [parent] + children if n not in ranks]
        if missing:
            raise KeyError(f'missing rank estimates for {missing}')
        total += ranks[parent] * math.prod(ranks[c] for c in children)
    return total


@dataclass
class PairingState:
    """Current partition Lambda, pairing Gamma and the rank estimates known so far."""

    members: list[Node]
    pairing: list[Node]
    ranks: dict[Node, int]
    gamma_first: float = 6.0
    gamma_second: float = 6.0
    optimization_evaluations: int = 0
    visited_costs: list[int] = field(default_factory=list)

    def parent_of(self, member: Node) -> Node:
        return next(p for p in self.pairing if member <= p)

    def partner_of(self, member: Node) -> Optional[Node]:
        rest = self.parent_of(member) - member
        return next((m for m in self.members if m == rest), None) if rest else None


def propose_swap(state: PairingState, rng: np.random.Generator) -> tuple[Node, Node]:
    """Draw nu_1 with probability proportional to r_parent^gamma_1, then nu_2 outside its pair."""
    if len(state.members) < 3:
        raise ValueError(f'a swap needs at least 3 nodes to pair, got {len(state.members)}')
    parent_ranks = np.array(
        [state.ranks[state.parent_of(m)] for m in state.members], dtype=float
    )
    weights = parent_ranks**state.gamma_first
    first = state.members[int(rng.choice(len(state.members), p=weights / weights.sum()))]
    excluded = {first, state.partner_of(first)}
    candidates = [i for i, m in enumerate(state.members) if m not in excluded]
    weights = parent_ranks[candidates] ** state.gamma_second
    second = state.members[candidates[int(rng.choice(len(candidates), p=weights / weights.sum()))]]
    return first, second


def swap(pairing: Sequence[Node], first: Node, second: Node) -> list[Node]:
    """Exchange two members between their parents; parents keep their positions."""
    first_parent = next(p for p in pairing if first <= p)
    second_parent = next(p for p in pairing if second <= p)
    replaced = {
        first_parent: (first_parent - first) | second,
        second_parent: (second_parent - second) | first,
    }
    return [replaced.get(p, p) for p in pairing]


def random_pairing(members: Sequence[Node], rng: np.random.Generator) -> list[Node]:
    """Random pairing; with an odd count the last member of the permutation is passed through."""
    order = [members[i] for i in rng.permutation(len(members))]
    pairing = [order[i] | order[i + 1] for i in range(0, len(order) - 1, 2)]
    if len(order) % 2:
        pairing.append(order[-1])
    return pairing


@dataclass(frozen=True)
class PairingResult:
    pairing: list[Node]
    cost: int
    visited_costs: list[int]
    evaluations: int


def optimize_pairing(
    oracle: CountingOracle,
    members: Sequence[Node],
    params: TreeAdaptationParams,
    cache: dict[Node, RankEstimate],
    measure: ProductMeasure,
    rng: np.random.Generator,
) -> PairingResult:
    """Stochastic local optimization of the pairing of ``members``.

    Rank estimates are cached by node in ``cache``, so each candidate is
    estimated at most once. Swaps are accepted when they do not increase the
    local cost; the cheapest visited pairing is returned.
    """
    members = sorted((frozenset(m) for m in members), key=sorted_variables)
    if len(members) < 2:
        raise ValueError('pairing needs at least two nodes')
    if len(members) == 2:
        return PairingResult([members[0] | members[1]], 0, [], 0)
    iterations = params.iterations if params.iterations is not None else 2 * measure.dimension
    evaluations = 0

    def ranks_for(nodes: Sequence[Node]) -> dict[Node, int]:
        nonlocal evaluations
        for node in nodes:
            if node not in cache:
                estimate = estimate_rank(
                    oracle,
                    node,
                    params.coarse_tolerance,
                    params.alpha_cap,
                    params.complement_cap,
                    measure,
                    rng,
                    min_columns=params.min_columns,
                )
                cache[node] = estimate
                evaluations += estimate.evaluations
        return {node: estimate.rank for node, estimate in cache.items()}

    pairing = random_pairing(members, rng)
    ranks = ranks_for(members + pairing)
    cost = pairing_cost(pairing, members, ranks)
    state = PairingState(
        members=members,
        pairing=pairing,
        ranks=ranks,
        gamma_first=params.gamma_first,
        gamma_second=params.gamma_second,
        visited_costs=[cost],
    )
    best, best_cost = list(pairing), cost
    for _ in range(iterations):
        first, second = propose_swap(state, rng)
        candidate = swap(state.pairing, first, second)
        state.ranks = ranks_for(candidate)
        candidate_cost = pairing_cost(candidate, members, state.ranks)
        state.visited_costs.append(candidate_cost)
        logger.debug(
            f'Swap {_label(first)} <-> {_label(second)}: cost {cost} -> {candidate_cost}'
        )
        if candidate_cost <= cost:
            state.pairing, cost = candidate, candidate_cost
            if cost < best_cost:
                best, best_cost = list(candidate), cost
    logger.info(
        f'Pairing {[_label(p) for p in best]} with local cost {best_cost} '
        f'({evaluations} estimation evaluations)'
    )
    return PairingResult(best, best_cost, state.visited_costs, evaluations)


def learn_with_tree_adaptation(
    oracle: CountingOracle,
    leaf_spaces: Mapping[int, Sequence[PolynomialSpace]],
    config: LearnerConfig,
    params: TreeAdaptationParams,
    rng: np.random.Generator,
) -> tuple[DimensionTree, TreeTensorNetwork, LearnReport]:
    """Build the tree level by level while learning the network on it.

    Each level learns the principal subspaces of the current nodes, then pairs
    them with :func:`optimize_pairing`. Pairing stops when two nodes remain;
    they become the children of the root. Rank-estimation evaluations are
    reported separately as n_optim.
    """
    started = time.perf_counter()
    dimension = len(leaf_spaces)
    if dimension == 2:
        tree = balanced_binary(2)
        ttn, report = learn(oracle, tree, leaf_spaces, config, rng)
        return tree, ttn, report

    measure = measure_of(leaf_spaces)
    # The final depth is unknown while learning; every node gets the capped-level budget.
    budget = level_budget(config.tolerance, config.level_cap, 2 * dimension - 1, dimension, config)
    bases: dict[Node, SubspaceBasis] = {}
    reports: list[NodeReport] = []
    cache: dict[Node, RankEstimate] = {}
    nodes: list[Node] = []
    pairings: list[list[list[int]]] = []
    pairing_costs: list[list[int]] = []
    optimization_evaluations = 0

    def partial() -> LearnReport:
        evaluations = sum(r.evaluations for r in reports)
        return LearnReport(
            nodes=list(reports),
            evaluations=evaluations,
            optimization_evaluations=optimization_evaluations,
            total_evaluations=evaluations + optimization_evaluations,
            pairings=list(pairings),
            pairing_costs=list(pairing_costs),
            tolerance_met=all(r.tolerance_met for r in reports),
            degenerate=any(r.degenerate for r in reports),
            wall_time=time.perf_counter() - started,
        )

    def learn_level(new_nodes: list[Node], members: Sequence[Node], level: int):
        streams = rng.spawn(len(new_nodes))

        def task(node: Node, stream: np.random.Generator):
            def run() -> NodeResult:
                children = [bases[m] for m in _members_of(node, members) if m != node]
                try:
                    return learn_node(
                        oracle,
                        node,
                        level,
                        children,
                        leaf_spaces[min(node)] if len(node) == 1 else None,
                        budget,
                        config,
                        measure,
                        stream,
                    )
                except Exception as e:
                    raise LearningError(sorted_variables(node), e, partial()) from e

            return run

        results = run_parallel(
            [task(node, stream) for node, stream in zip(new_nodes, streams)], config.workers
        )
        for node, result in zip(new_nodes, results):
            bases[node] = result.basis
            reports.append(result.report)
            nodes.append(node)

    members: list[Node] = [frozenset([v]) for v in range(1, dimension + 1)]
    level = 0
    learn_level(members, [], level)
    while len(members) > 2:
        level += 1
        (stream,) = rng.spawn(1)
        try:
            result = optimize_pairing(oracle, members, params, cache, measure, stream)
        except Exception as e:
            raise LearningError(sorted_variables(frozenset().union(*members)), e, partial()) from e
        optimization_evaluations += result.evaluations
        pairings.append([_label(p) for p in result.pairing])
        pairing_costs.append(result.visited_costs)
        new_nodes = [p for p in result.pairing if p not in members]
        learn_level(new_nodes, members, level)
        members = sorted(result.pairing, key=sorted_variables)

    root = frozenset(range(1, dimension + 1))
    (root_stream,) = rng.spawn(1)
    try:
        root_tensor, root_report = learn_root(
            oracle, [bases[m] for m in members], config, root_stream
        )
    except Exception as e:
        raise LearningError(sorted_variables(root), e, partial()) from e
    reports.append(root_report)

    tree = validate(nodes + [root])
    for report in reports:
        report.level = tree.level(report.node)
    tensors = {node: bases[node].coefficients for node in nodes}
    tensors[root] = root_tensor
    ttn = TreeTensorNetwork(tree, {min(n): bases[n].space for n in tree.leaves}, tensors)

    report = partial()
    report.storage = ttn.storage_complexity()
    report.ranks = ttn.rank_document()
    report.tree = tree.to_document()
    report.wall_time = time.perf_counter() - started
    logger.info(
        f'Adapted tree of depth {tree.depth}: storage {report.storage}, n = {report.evaluations}, '
        f'n_optim = {report.optimization_evaluations}'
    )
    return tree, ttn, report
