# SPDX-License-Identifier: Apache-2.0

import logging
import math
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidTreeError
from .utils import sorted_variables


logger = logging.getLogger(__name__)


def _order_key(node: frozenset[int]) -> tuple[int, ...]:
    return sorted_variables(node)


class DimensionTree:
    """Dimension partition tree over D = {1, ..., d}.

    Instances are built through :func:`validate` or one of the constructors
    below, and are immutable afterwards. Nodes are frozensets of 1-based
    variables; leaves are always singletons.
    """

    def __init__(
        self,
        dimension: int,
        nodes: tuple[frozenset[int], ...],
        parent: dict[frozenset[int], frozenset[int]],
        children: dict[frozenset[int], tuple[frozenset[int], ...]],
        level: dict[frozenset[int], int],
    ):
        self.dimension = dimension
        self.root = frozenset(range(1, dimension + 1))
        self.nodes = nodes
        self._parent = parent
        self._children = children
        self._level = level
        self.leaves = tuple(n for n in nodes if not children[n])
        self.depth = max(level.values())

    def __repr__(self):
        return f'<DimensionTree d={self.dimension} depth={self.depth} nodes={self.to_document()}>'

    def __eq__(self, other):
        return isinstance(other, DimensionTree) and set(self.nodes) == set(other.nodes)

    def __hash__(self):
        return hash(frozenset(self.nodes))

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return frozenset(node) in self._level

    def parent(self, node: Iterable[int]) -> Optional[frozenset[int]]:
        return self._parent.get(frozenset(node))

    def children(self, node: Iterable[int]) -> tuple[frozenset[int], ...]:
        """Children S(alpha), sorted lexicographically by their sorted variables."""
        return self._children[frozenset(node)]

    def level(self, node: Iterable[int]) -> int:
        return self._level[frozenset(node)]

    def is_leaf(self, node: Iterable[int]) -> bool:
        return not self._children[frozenset(node)]

    @property
    def interior_nodes(self) -> tuple[frozenset[int], ...]:
        return tuple(n for n in self.nodes if self._children[n])

    def nodes_at_level(self, level: int) -> tuple[frozenset[int], ...]:
        return tuple(n for n in self.nodes if self._level[n] == level)

    def to_document(self) -> list[list[int]]:
        return [list(sorted_variables(n)) for n in self.nodes]


def validate(nodes: Iterable[Iterable[int]]) -> DimensionTree:
    """Check that ``nodes`` form a dimension partition tree and derive its maps.

    Raises:
        InvalidTreeError: on a missing root, duplicate or empty nodes,
            overlapping nodes, a node whose children do not partition it, or a
            leaf with more than one variable.
    """
    node_list = [frozenset(int(v) for v in node) for node in nodes]
    if not node_list:
        raise InvalidTreeError('empty node set')
    node_set = set(node_list)
    if len(node_set) != len(node_list):
        duplicates = sorted(
            {_order_key(n) for n in node_list if node_list.count(n) > 1}
        )
        raise InvalidTreeError(f'duplicate nodes: {[list(n) for n in duplicates]}')
    if frozenset() in node_set:
        raise InvalidTreeError('empty node')
    variables = frozenset().union(*node_set)
    if min(variables) < 1:
        raise InvalidTreeError('variables must be numbered from 1')
    dimension = max(variables)
    root = frozenset(range(1, dimension + 1))
    if root not in node_set:
        raise InvalidTreeError(f'missing root {list(sorted_variables(root))}')

    ordered = sorted(node_set, key=lambda n: (-len(n), _order_key(n)))
    for i, first in enumerate(ordered):
        for second in ordered[i + 1 :]:
            if first & second and not second <= first:
                raise InvalidTreeError(
                    f'nodes {list(_order_key(first))} and {list(_order_key(second))} overlap '
                    f'without nesting'
                )

    parent: dict[frozenset[int], frozenset[int]] = {}
    for node in ordered:
        if node == root:
            continue
        # Smallest strict superset; laminarity makes it unique.
        parent[node] = min((n for n in node_set if node < n), key=len)

    children: dict[frozenset[int], list[frozenset[int]]] = {n: [] for n in node_set}
    for node, up in parent.items():
        children[up].append(node)

    for node in ordered:
        kids = children[node]
        if not kids:
            if len(node) > 1:
                raise InvalidTreeError(
                    f'leaf {list(_order_key(node))} has more than one variable'
                )
            continue
        covered = frozenset().union(*kids)
        if covered != node or len(kids) < 2:
            raise InvalidTreeError(
                f'children {[list(_order_key(k)) for k in sorted(kids, key=_order_key)]} '
                f'do not partition {list(_order_key(node))}'
            )

    level = {root: 0}
    for node in ordered:
        if node != root:
            level[node] = level[parent[node]] + 1

    return DimensionTree(
        dimension=dimension,
        nodes=tuple(sorted(node_set, key=lambda n: (level[n], _order_key(n)))),
        parent=parent,
        children={n: tuple(sorted(k, key=_order_key)) for n, k in children.items()},
        level=level,
    )


def _check_dimension(d: int):
    if d < 2:
        raise InvalidTreeError(f'a dimension tree needs d >= 2, got {d}')


def _balanced_nodes(variables: list[int]) -> list[frozenset[int]]:
    nodes = [frozenset(variables)]
    if len(variables) > 1:
        split = math.ceil(len(variables) / 2)
        nodes += _balanced_nodes(variables[:split])
        nodes += _balanced_nodes(variables[split:])
    return nodes


def balanced_binary(d: int) -> DimensionTree:
    """Binary tree splitting each ordered variable list evenly, the left part taking ceil(k/2)."""
    _check_dimension(d)
    return validate(_balanced_nodes(list(range(1, d + 1))))


def random_balanced(d: int, rng: np.random.Generator) -> DimensionTree:
    """Balanced binary shape over a uniformly random permutation of the variables."""
    _check_dimension(d)
    permutation = [int(v) for v in rng.permutation(np.arange(1, d + 1))]
    return validate(_balanced_nodes(permutation))


def _random_bipartition_nodes(
    variables: list[int], rng: np.random.Generator
) -> list[frozenset[int]]:
    nodes = [frozenset(variables)]
    if len(variables) == 1:
        return nodes
    # The first variable stays left; each bipartition into nonempty parts is equally likely.
    while True:
        goes_right = rng.random(len(variables) - 1) < 0.5
        if goes_right.any():
            break
    left = [variables[0]] + [v for v, r in zip(variables[1:], goes_right) if not r]
    right = [v for v, r in zip(variables[1:], goes_right) if r]
    return nodes + _random_bipartition_nodes(left, rng) + _random_bipartition_nodes(right, rng)


def random_binary(d: int, rng: np.random.Generator) -> DimensionTree:
    """Binary tree from recursive uniformly random bipartitions of each node."""
    _check_dimension(d)
    return validate(_random_bipartition_nodes(list(range(1, d + 1)), rng))


def nodes_by_decreasing_level(tree: DimensionTree) -> list[frozenset[int]]:
    """All nodes except the root, deepest first, ties in lexicographic order."""
    return [
        node
        for level in range(tree.depth, 0, -1)
        for node in sorted(tree.nodes_at_level(level), key=_order_key)
    ]
