# SPDX-License-Identifier: Apache-2.0

"""Functions in tree-based tensor format: evaluation, storage and model documents."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from semver import Version

from .dimension_tree import DimensionTree, nodes_by_decreasing_level, validate
from .errors import (
    CapacityExceededError,
    DimensionMismatchError,
    InvalidTreeError,
    ModelFormatError,
    UnsupportedVersionError,
)
from .measures_bases import (
    PolynomialFamily,
    PolynomialSpace,
    hermite_basis,
    legendre_basis,
)
from .utils import node_key, parse_node_key, row_wise_kron, sorted_variables


logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_FULL_TENSOR_CAP = 10**7


class TreeTensorNetwork:
    """A function v(x) in T_r^T(V) given by one tensor per tree node.

    Leaf tensors have shape ``(m_nu, r_nu)``, interior tensors
    ``(prod of children ranks, r_alpha)`` with children in lexicographic order,
    and the root tensor is a vector of length ``prod of children ranks``.
    """

    def __init__(
        self,
        tree: DimensionTree,
        leaf_spaces: Mapping[int, PolynomialSpace],
        tensors: Mapping[Iterable[int], np.ndarray],
    ):
        self.tree = tree
        self.leaf_spaces = {int(v): space for v, space in leaf_spaces.items()}
        missing = [v for v in range(1, tree.dimension + 1) if v not in self.leaf_spaces]
        if missing:
            raise DimensionMismatchError(f'no leaf space for variables {missing}')

        self._tensors: dict[frozenset[int], np.ndarray] = {}
        for node, tensor in tensors.items():
            array = np.array(tensor, dtype=float, copy=True)
            array.flags.writeable = False
            self._tensors[frozenset(node)] = array

        self.ranks: dict[frozenset[int], int] = {}
        for node in nodes_by_decreasing_level(tree) + [tree.root]:
            self._check_shape(node)

    def __repr__(self):
        return (
            f'<TreeTensorNetwork d={self.tree.dimension} '
            f'storage={self.storage_complexity()} ranks={self.rank_document()}>'
        )

    def _check_shape(self, node: frozenset[int]):
        label = list(sorted_variables(node))
        if node not in self._tensors:
            raise DimensionMismatchError(f'missing tensor for node {label}')
        tensor = self._tensors[node]
        if self.tree.is_leaf(node):
            (variable,) = node
            expected_rows = self.leaf_spaces[variable].dimension
        else:
            expected_rows = math.prod(self.ranks[c] for c in self.tree.children(node))
        if node == self.tree.root:
            if tensor.shape != (expected_rows,):
                raise DimensionMismatchError(
                    f'root tensor has shape {tensor.shape}, expected ({expected_rows},)'
                )
            self.ranks[node] = 1
            return
        if tensor.ndim != 2 or tensor.shape[0] != expected_rows or tensor.shape[1] < 1:
            raise DimensionMismatchError(
                f'tensor of node {label} has shape {tensor.shape}, '
                f'expected ({expected_rows}, r) with r >= 1'
            )
        self.ranks[node] = tensor.shape[1]

    @property
    def dimension(self) -> int:
        return self.tree.dimension

    def tensor(self, node: Iterable[int]) -> np.ndarray:
        return self._tensors[frozenset(node)]

    @property
    def tensors(self) -> dict[frozenset[int], np.ndarray]:
        return dict(self._tensors)

    def leaf_dimensions(self) -> dict[int, int]:
        return {v: s.dimension for v, s in self.leaf_spaces.items()}

    def rank_document(self) -> dict[str, int]:
        return {node_key(n): self.ranks[n] for n in self.tree.nodes}

    def node_values(self, points: np.ndarray) -> dict[frozenset[int], np.ndarray]:
        """Values of every node's basis (n, r_alpha); the root entry holds v itself as (n,)."""
        points = np.asarray(points, dtype=float)
        values: dict[frozenset[int], np.ndarray] = {}
        for node in nodes_by_decreasing_level(self.tree) + [self.tree.root]:
            if self.tree.is_leaf(node):
                (variable,) = node
                features = self.leaf_spaces[variable].evaluate_univariate(points[:, variable - 1])
            else:
                features = row_wise_kron([values[c] for c in self.tree.children(node)])
            values[node] = features @ self._tensors[node]
        return values

    def evaluate(self, points: np.ndarray) -> Union[np.ndarray, float]:
        """Evaluate at a single point of shape ``(d,)`` or a batch of shape ``(n, d)``."""
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        batch = points.reshape(1, -1) if single else points
        if batch.ndim != 2 or batch.shape[1] != self.dimension:
            raise DimensionMismatchError(
                f'points with shape {points.shape} do not match dimension {self.dimension}'
            )
        result = self.node_values(batch)[self.tree.root]
        return float(result[0]) if single else result

    def __call__(self, points: np.ndarray) -> Union[np.ndarray, float]:
        return self.evaluate(points)

    def storage_complexity(self) -> int:
        return storage_complexity(self.tree, self.ranks, self.leaf_dimensions())

    def full_coefficients(self, cap: int = DEFAULT_FULL_TENSOR_CAP) -> np.ndarray:
        """Coefficient tensor of shape ``(m_1, ..., m_d)`` over the product basis.

        Raises:
            CapacityExceededError: when the tensor would have more than ``cap`` entries.
        """
        dims = [self.leaf_spaces[v].dimension for v in range(1, self.dimension + 1)]
        if math.prod(dims) > cap:
            raise CapacityExceededError(
                f'full coefficient tensor of shape {tuple(dims)} exceeds the cap of {cap} entries'
            )
        # Variable nu is axis nu - 1; every non-root node gets one rank axis after those.
        rank_axis = {
            node: self.dimension + i for i, node in enumerate(nodes_by_decreasing_level(self.tree))
        }
        operands: list[Any] = []
        for node in self.tree.nodes:
            tensor = self._tensors[node]
            if self.tree.is_leaf(node):
                (variable,) = node
                operands += [tensor, [variable - 1, rank_axis[node]]]
                continue
            children = self.tree.children(node)
            shape = [self.ranks[c] for c in children]
            axes = [rank_axis[c] for c in children]
            if node != self.tree.root:
                shape.append(self.ranks[node])
                axes.append(rank_axis[node])
            operands += [tensor.reshape(shape), axes]
        return np.einsum(*operands, list(range(self.dimension)), optimize=True)


def storage_complexity(
    tree: DimensionTree,
    ranks: Mapping[Iterable[int], int],
    leaf_dims: Mapping[int, int],
) -> int:
    """Sum over interior nodes of r_alpha * prod r_children plus sum over leaves of r_nu * m_nu.

    The root rank is taken as 1 whatever ``ranks`` holds for it.
    """
    ranks = {frozenset(k): v for k, v in ranks.items()}
    total = 0
    for node in tree.nodes:
        rank = 1 if node == tree.root else ranks.get(node)
        if rank is None:
            raise KeyError(f'missing rank for node {list(sorted_variables(node))}')
        if tree.is_leaf(node):
            (variable,) = node
            if variable not in leaf_dims:
                raise KeyError(f'missing leaf dimension for variable {variable}')
            total += rank * leaf_dims[variable]
        else:
            children = tree.children(node)
            missing = [list(sorted_variables(c)) for c in children if c not in ranks]
            if missing:
                raise KeyError(f'missing ranks for nodes {missing}')
            total += rank * math.prod(ranks[c] for c in children)
    return total


def alpha_matricization_rank(
    ttn: TreeTensorNetwork,
    alpha: Iterable[int],
    tolerance: float = 1e-10,
    cap: int = DEFAULT_FULL_TENSOR_CAP,
) -> int:
    """Rank of the alpha-unfolding of the coefficient tensor, by explicit SVD.

    Counts singular values above ``tolerance`` times the largest one.
    """
    coefficients = ttn.full_coefficients(cap)
    rows = [v - 1 for v in sorted(alpha)]
    cols = [a for a in range(ttn.dimension) if a not in set(rows)]
    unfolding = np.transpose(coefficients, rows + cols).reshape(
        math.prod(coefficients.shape[a] for a in rows), -1
    )
    singular_values = np.linalg.svd(unfolding, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    return int(np.sum(singular_values > tolerance * singular_values[0]))


class LeafBasisDocument(BaseModel):
    family: PolynomialFamily = Field(description='Polynomial family of the leaf basis')
    degree: int = Field(ge=0, description='Maximal polynomial degree')
    interval: Optional[list[float]] = Field(
        default=None, description='Support [a, b] of the uniform measure (Legendre only)'
    )


class TensorDocument(BaseModel):
    shape: list[int] = Field(description='Tensor shape')
    data: list[float] = Field(description='Row-major tensor entries')


class ModelDocument(BaseModel):
    version: Union[int, str] = Field(default=MODEL_FORMAT_VERSION, description='Format version')
    tree: list[list[int]] = Field(description='Tree nodes as sorted variable lists')
    ranks: dict[str, int] = Field(description='Rank of every node, root included')
    leaf_bases: dict[str, LeafBasisDocument] = Field(description='Leaf basis per variable')
    tensors: dict[str, TensorDocument] = Field(description='Tensor per node')


def _check_version(version: Any):
    try:
        parsed = Version.parse(str(version), optional_minor_and_patch=True)
    except (TypeError, ValueError) as e:
        raise UnsupportedVersionError(f'Unreadable model format version {version!r}: {e}') from e
    if parsed.major != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f'Unsupported model format version {version!r}; '
            f'this library reads version {MODEL_FORMAT_VERSION}'
        )


def serialize(ttn: TreeTensorNetwork) -> dict[str, Any]:
    """Model document of ``ttn`` as a JSON-compatible dict."""
    leaf_bases = {}
    for variable, space in sorted(ttn.leaf_spaces.items()):
        interval = None
        if space.family == PolynomialFamily.LEGENDRE:
            interval = [space.marginal.lower, space.marginal.upper]
        leaf_bases[str(variable)] = LeafBasisDocument(
            family=space.family, degree=space.degree, interval=interval
        )
    document = ModelDocument(
        version=MODEL_FORMAT_VERSION,
        tree=ttn.tree.to_document(),
        ranks=ttn.rank_document(),
        leaf_bases=leaf_bases,
        tensors={
            node_key(node): TensorDocument(
                shape=list(ttn.tensor(node).shape), data=ttn.tensor(node).ravel().tolist()
            )
            for node in ttn.tree.nodes
        },
    )
    return document.model_dump(mode='json')


def to_json(ttn: TreeTensorNetwork) -> str:
    # json writes floats with repr, which round-trips exactly.
    return json.dumps(serialize(ttn))


def _leaf_space(variable: int, document: LeafBasisDocument) -> PolynomialSpace:
    if document.family == PolynomialFamily.HERMITE:
        return hermite_basis(document.degree, variable)
    interval = tuple(document.interval) if document.interval else (-1.0, 1.0)
    if len(interval) != 2:
        raise ModelFormatError(f'leaf basis of variable {variable} has a malformed interval')
    return legendre_basis(document.degree, interval, variable)


def deserialize(document: Union[str, bytes, Mapping[str, Any]]) -> TreeTensorNetwork:
    """Rebuild a network from a model document (dict or JSON text).

    Raises:
        ModelFormatError: malformed JSON, missing nodes or inconsistent shapes.
        UnsupportedVersionError: the document's format version is not supported.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f'Malformed model document: {e}') from e
    if not isinstance(document, Mapping):
        raise ModelFormatError('Model document must be a JSON object')
    if 'version' not in document:
        raise ModelFormatError('Model document has no version field')
    _check_version(document['version'])

    try:
        parsed = ModelDocument.model_validate(document)
    except ValidationError as e:
        raise ModelFormatError(f'Malformed model document: {e}') from e

    try:
        tree = validate(parsed.tree)
    except InvalidTreeError as e:
        raise ModelFormatError(f'Invalid tree in model document: {e}') from e

    leaf_spaces = {}
    for variable in range(1, tree.dimension + 1):
        basis = parsed.leaf_bases.get(str(variable))
        if basis is None:
            raise ModelFormatError(f'Model document has no leaf basis for variable {variable}')
        try:
            leaf_spaces[variable] = _leaf_space(variable, basis)
        except ValueError as e:
            raise ModelFormatError(f'Invalid leaf basis for variable {variable}: {e}') from e

    tensors = {}
    for node in tree.nodes:
        key = node_key(node)
        entry = parsed.tensors.get(key)
        if entry is None:
            raise ModelFormatError(f'Model document has no tensor for node [{key}]')
        if math.prod(entry.shape) != len(entry.data):
            raise ModelFormatError(
                f'Tensor of node [{key}] has {len(entry.data)} entries for shape {entry.shape}'
            )
        tensors[node] = np.asarray(entry.data, dtype=float).reshape(entry.shape)

    unknown = set(parsed.tensors) - {node_key(n) for n in tree.nodes}
    if unknown:
        raise ModelFormatError(f'Tensors for nodes outside the tree: {sorted(unknown)}')

    try:
        ttn = TreeTensorNetwork(tree, leaf_spaces, tensors)
    except DimensionMismatchError as e:
        raise ModelFormatError(f'Inconsistent model document: {e}') from e

    for key, rank in parsed.ranks.items():
        node = parse_node_key(key)
        if ttn.ranks.get(node) != rank:
            raise ModelFormatError(
                f'Rank {rank} recorded for node [{key}] does not match its tensor '
                f'(rank {ttn.ranks.get(node)})'
            )
    return ttn


def save_model(path: Union[str, Path], ttn: TreeTensorNetwork):
    Path(path).write_text(to_json(ttn), encoding='utf-8')
    logger.info(f'Wrote model with storage {ttn.storage_complexity()} to {path}')


def load_model(path: Union[str, Path]) -> TreeTensorNetwork:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ModelFormatError(f'Cannot read model file {path}: {e}') from e
    return deserialize(text)
