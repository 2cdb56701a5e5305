# SPDX-License-Identifier: Apache-2.0

import json

import numpy as np
import pytest

from ttn_core.dimension_tree import balanced_binary, validate
from ttn_core.errors import (
    CapacityExceededError,
    DimensionMismatchError,
    ModelFormatError,
    UnsupportedVersionError,
)
from ttn_core.measures_bases import hermite_basis, legendre_basis
from ttn_core.tensor_network import (
    TreeTensorNetwork,
    alpha_matricization_rank,
    deserialize,
    load_model,
    save_model,
    serialize,
    storage_complexity,
    to_json,
)


def random_network(tree, rank, degree, rng, leaf_space=legendre_basis):
    """Network on ``tree`` with every non-root rank equal to ``rank`` and random tensors."""
    leaves = {v: leaf_space(degree, variable=v) for v in range(1, tree.dimension + 1)}
    tensors = {}
    for node in tree.nodes:
        if tree.is_leaf(node):
            rows = degree + 1
        else:
            rows = rank ** len(tree.children(node))
        shape = (rows,) if node == tree.root else (rows, rank)
        tensors[node] = rng.standard_normal(shape)
    return TreeTensorNetwork(tree, leaves, tensors)


def brute_force(ttn, points):
    coefficients = ttn.full_coefficients()
    values = coefficients
    for variable in range(1, ttn.dimension + 1):
        features = ttn.leaf_spaces[variable].evaluate_univariate(points[:, variable - 1])
        if variable == 1:
            values = np.einsum('ni,i...->n...', features, values)
        else:
            values = np.einsum('ni,ni...->n...', features, values)
    return values


def test_constant_network():
    tree = balanced_binary(3)
    leaves = {v: legendre_basis(2, variable=v) for v in (1, 2, 3)}
    tensors = {node: np.array([[1.0], [0.0], [0.0]]) for node in tree.leaves}
    tensors.update({node: np.ones((1, 1)) for node in tree.interior_nodes if node != tree.root})
    tensors[tree.root] = np.ones(1)
    ttn = TreeTensorNetwork(tree, leaves, tensors)
    assert ttn.evaluate([0.3, -0.7, 0.1]) == pytest.approx(1.0)
    assert ttn.ranks[tree.root] == 1


def test_product_of_linear_legendre():
    tree = balanced_binary(2)
    leaves = {1: legendre_basis(1, variable=1), 2: legendre_basis(1, variable=2)}
    tensors = {
        frozenset({1}): np.array([[0.0], [1.0]]),
        frozenset({2}): np.array([[0.0], [1.0]]),
        tree.root: np.array([1.0]),
    }
    ttn = TreeTensorNetwork(tree, leaves, tensors)
    assert ttn(np.array([1.0, 1.0])) == pytest.approx(3.0)
    np.testing.assert_allclose(ttn(np.array([[1.0, 1.0], [0.0, 0.5]])), [3.0, 0.0], atol=1e-14)


def test_evaluate_matches_full_contraction(six_variable_tree, rng):
    ttn = random_network(six_variable_tree, rank=2, degree=2, rng=rng)
    points = rng.uniform(-1, 1, (40, 6))
    np.testing.assert_allclose(ttn.evaluate(points), brute_force(ttn, points), rtol=1e-12)


def test_evaluate_is_multilinear(rng):
    tree = balanced_binary(4)
    ttn = random_network(tree, rank=2, degree=3, rng=rng)
    points = rng.uniform(-1, 1, (10, 4))
    tensors = ttn.tensors
    tensors[frozenset({3, 4})] = 2.5 * tensors[frozenset({3, 4})]
    scaled = TreeTensorNetwork(tree, ttn.leaf_spaces, tensors)
    np.testing.assert_allclose(scaled(points), 2.5 * ttn(points), rtol=1e-12)


def test_shape_mismatch_is_rejected(rng):
    tree = balanced_binary(2)
    leaves = {1: legendre_basis(2, variable=1), 2: legendre_basis(2, variable=2)}
    with pytest.raises(DimensionMismatchError):
        TreeTensorNetwork(
            tree,
            leaves,
            {
                frozenset({1}): np.ones((2, 1)),
                frozenset({2}): np.ones((3, 1)),
                tree.root: np.ones(1),
            },
        )
    ttn = random_network(tree, rank=1, degree=2, rng=rng)
    with pytest.raises(DimensionMismatchError):
        ttn.evaluate(np.zeros((4, 3)))


def test_storage_complexity_formula(rng):
    tree = balanced_binary(4)
    ranks = {node: 2 for node in tree.nodes}
    assert storage_complexity(tree, ranks, {v: 5 for v in range(1, 5)}) == 60
    two = balanced_binary(2)
    assert storage_complexity(two, {frozenset({1}): 1, frozenset({2}): 1}, {1: 1, 2: 1}) == 3
    with pytest.raises(KeyError):
        storage_complexity(tree, {frozenset({1}): 2}, {v: 5 for v in range(1, 5)})
    ttn = random_network(tree, rank=2, degree=4, rng=rng)
    assert ttn.storage_complexity() == 60
    assert ttn.storage_complexity() == sum(t.size for t in ttn.tensors.values())


def test_alpha_ranks(rng):
    tree = balanced_binary(4)
    product = random_network(tree, rank=1, degree=3, rng=rng)
    for node in tree.nodes:
        if node != tree.root:
            assert alpha_matricization_rank(product, node) == 1

    # Identity root: g(x1, x2) + h(x3, x4) style sum of two separated terms.
    tensors = random_network(tree, rank=2, degree=3, rng=rng).tensors
    tensors[tree.root] = np.array([1.0, 0.0, 0.0, 1.0])
    summed = TreeTensorNetwork(tree, product.leaf_spaces, tensors)
    assert alpha_matricization_rank(summed, [1, 2]) == 2
    for node in tree.nodes:
        if node != tree.root:
            assert alpha_matricization_rank(summed, node) <= summed.ranks[node]


def test_full_coefficients_cap(rng):
    ttn = random_network(balanced_binary(4), rank=1, degree=9, rng=rng)
    with pytest.raises(CapacityExceededError):
        ttn.full_coefficients(cap=1000)


def test_round_trip_is_exact(rng, tmp_path):
    tree = validate([[1], [2], [3], [2, 3], [1, 2, 3]])
    ttn = random_network(tree, rank=2, degree=4, rng=rng, leaf_space=hermite_basis)
    restored = deserialize(to_json(ttn))
    points = rng.standard_normal((100, 3))
    assert np.array_equal(restored(points), ttn(points))
    for node in tree.nodes:
        assert np.array_equal(restored.tensor(node), ttn.tensor(node))

    path = tmp_path / 'model.json'
    save_model(path, ttn)
    assert np.array_equal(load_model(path)(points), ttn(points))
    assert json.loads(path.read_text())['version'] == 1


def test_legendre_interval_survives_round_trip(rng):
    tree = balanced_binary(2)
    leaves = {v: legendre_basis(3, interval=(0.0, 4.0), variable=v) for v in (1, 2)}
    tensors = {
        frozenset({1}): rng.standard_normal((4, 2)),
        frozenset({2}): rng.standard_normal((4, 2)),
        tree.root: rng.standard_normal(4),
    }
    ttn = TreeTensorNetwork(tree, leaves, tensors)
    restored = deserialize(serialize(ttn))
    assert restored.leaf_spaces[2].marginal.upper == 4.0
    points = rng.uniform(0.0, 4.0, (20, 2))
    assert np.array_equal(restored(points), ttn(points))


def test_missing_tensor_names_the_node(rng):
    document = serialize(random_network(balanced_binary(4), rank=2, degree=2, rng=rng))
    del document['tensors']['3,4']
    with pytest.raises(ModelFormatError, match=r'\[3,4\]'):
        deserialize(document)


def test_malformed_documents(rng):
    document = serialize(random_network(balanced_binary(2), rank=1, degree=2, rng=rng))
    with pytest.raises(ModelFormatError):
        deserialize('{"version": 1, "tree": [')
    bad_size = json.loads(json.dumps(document))
    bad_size['tensors']['1']['data'] = bad_size['tensors']['1']['data'][:-1]
    with pytest.raises(ModelFormatError, match='entries'):
        deserialize(bad_size)
    bad_rank = json.loads(json.dumps(document))
    bad_rank['ranks']['1'] = 5
    with pytest.raises(ModelFormatError, match='Rank'):
        deserialize(bad_rank)


@pytest.mark.parametrize('version', [2, '2.0.0', 'not-a-version'])
def test_unsupported_version(rng, version):
    document = serialize(random_network(balanced_binary(2), rank=1, degree=1, rng=rng))
    document['version'] = version
    with pytest.raises(UnsupportedVersionError):
        deserialize(document)
