# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

from benchmarks.functions import henon_heiles
from ttn_core.boosted_least_squares import StabilityParams
from ttn_core.dimension_tree import balanced_binary
from ttn_core.errors import LearningError
from ttn_core.learner import (
    WORKERS_ENV,
    C1Mode,
    LearnerConfig,
    adapt_leaf_basis,
    leaf_criterion,
    leaf_space_sequences,
    learn,
    level_budget,
    run_parallel,
    tolerance_budget,
)
from ttn_core.measures_bases import ProductMeasure, legendre_basis, polynomial_sequence
from ttn_core.oracle import CountingOracle


def relative_error(ttn, function, points):
    exact = function(points)
    return np.linalg.norm(ttn(points) - exact) / np.linalg.norm(exact)


def sum_of_products(x):
    return x[:, 0] * x[:, 1] + x[:, 2] * x[:, 3]


def test_heuristic_and_formal_constants():
    config = LearnerConfig()
    assert config.c1() == pytest.approx(22.202, abs=1e-3)
    formal = LearnerConfig(c1_mode=C1Mode.FORMAL)
    assert formal.gamma() == pytest.approx(1000.0)
    assert formal.c1() == pytest.approx(2002.0)
    with_fraction = LearnerConfig(
        c1_mode='formal',
        gamma_with_keep_fraction=True,
        stability=StabilityParams(keep_fraction=0.5),
    )
    assert with_fraction.gamma() == pytest.approx(500.0)


def test_tolerance_budget_on_an_eleven_node_tree():
    tree = balanced_binary(6)
    assert len(tree) == 11
    config = LearnerConfig()
    budgets = tolerance_budget(1e-3, tree, config)
    level_one = next(node for node in tree.nodes if tree.level(node) == 1)
    assert 1e-3 / budgets[level_one].pca == pytest.approx(21.07, abs=0.01)
    assert budgets[frozenset({1})].pca < budgets[level_one].pca
    deep = level_budget(1e-3, 5, 11, 6, config)
    capped = level_budget(1e-3, 3, 11, 6, config)
    assert deep == capped
    assert level_budget(1e-3, 0, 11, 6, config).pca == pytest.approx(1e-3 / np.sqrt(10))


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, '4')
    assert LearnerConfig().workers == 4
    monkeypatch.setenv(WORKERS_ENV, 'many')
    assert LearnerConfig().workers == 1
    monkeypatch.delenv(WORKERS_ENV)
    assert LearnerConfig().workers == 1
    assert LearnerConfig(workers=2).workers == 2


def test_leaf_criterion():
    assert leaf_criterion(np.array([3.0, 4.0])) == pytest.approx(0.8)
    assert leaf_criterion(np.zeros(4)) == 0.0
    assert leaf_criterion(np.array([1.0, 0.0])) == 0.0


def test_leaf_space_sequences():
    measure = ProductMeasure.uniform(3)
    fixed = leaf_space_sequences(measure, LearnerConfig(degree=4))
    assert [len(s) for s in fixed.values()] == [1, 1, 1]
    assert fixed[2][0].degree == 4 and fixed[2][0].variables == (2,)
    adaptive = leaf_space_sequences(
        ProductMeasure.gaussian(2), LearnerConfig(adaptive_basis=True, max_degree=6)
    )
    assert [space.degree for space in adaptive[1]] == [1, 2, 3, 4, 5, 6]


def test_adapt_leaf_basis_stops_after_the_exact_degree(rng):
    oracle = CountingOracle(lambda x: (1.0 + x[:, 0]) ** 5 * (1.5 + x[:, 1]), 2)
    measure = ProductMeasure.uniform(2)
    sequence = polynomial_sequence(measure.marginal(1), 1, 10)
    adaptation = adapt_leaf_basis(oracle, 1, sequence, 1e-10, StabilityParams(), rng, measure)
    assert adaptation.space.degree == 6
    assert not adaptation.exhausted
    assert adaptation.evaluations == oracle.calls
    assert adaptation.complement_point.shape == (1,)


def test_adapt_leaf_basis_reuses_evaluations(rng):
    oracle = CountingOracle(lambda x: (1.0 + x[:, 0]) ** 5 * (1.5 + x[:, 1]), 2)
    measure = ProductMeasure.uniform(2)
    sequence = polynomial_sequence(measure.marginal(1), 1, 10)
    adaptation = adapt_leaf_basis(oracle, 1, sequence, 1e-10, StabilityParams(), rng, measure)
    # Separate samples for degrees 1 to 6 would take at least 2 + 3 + ... + 7 points.
    assert adaptation.evaluations < 27
    assert adaptation.sample.size >= 7
    x = adaptation.sample.points[:, 0]
    exact = (1.0 + x) ** 5 * (1.5 + adaptation.complement_point[0])
    fitted = adaptation.space.evaluate(adaptation.sample.points) @ adaptation.coefficients
    np.testing.assert_allclose(fitted, exact)


def test_adapt_leaf_basis_flags_exhaustion(rng):
    oracle = CountingOracle(lambda x: np.exp(3.0 * x[:, 0]) + x[:, 1], 2)
    measure = ProductMeasure.uniform(2)
    sequence = polynomial_sequence(measure.marginal(1), 1, 3)
    adaptation = adapt_leaf_basis(oracle, 1, sequence, 1e-12, StabilityParams(), rng, measure)
    assert adaptation.exhausted
    assert adaptation.space.degree == 3


def test_learn_rank_one_product(product_oracle, balanced_four, legendre_leaves, quick_config, rng):
    ttn, report = learn(product_oracle, balanced_four, legendre_leaves, quick_config, rng)
    assert all(rank == 1 for rank in report.ranks.values())
    points = rng.uniform(-1, 1, (500, 4))
    assert relative_error(ttn, product_oracle.function, points) < 1e-8
    assert report.evaluations == product_oracle.calls
    assert report.total_evaluations == report.evaluations
    assert report.storage == ttn.storage_complexity()
    assert report.tree == balanced_four.to_document()
    assert report.node([1, 2]).level == 1
    assert report.node([1, 2, 3, 4]).rank == 1
    assert report.tolerance_met


def test_learn_sum_of_products(balanced_four, legendre_leaves, quick_config, rng):
    oracle = CountingOracle(sum_of_products, 4)
    ttn, report = learn(oracle, balanced_four, legendre_leaves, quick_config, rng)
    assert report.ranks == {'1': 2, '2': 2, '3': 2, '4': 2, '1,2': 2, '3,4': 2, '1,2,3,4': 1}
    points = rng.uniform(-1, 1, (500, 4))
    assert relative_error(ttn, sum_of_products, points) < 1e-8


def test_learn_without_adaptive_pca(product_oracle, balanced_four, legendre_leaves, rng):
    config = LearnerConfig(tolerance=1e-8, adaptive_pca=False, workers=1)
    ttn, report = learn(product_oracle, balanced_four, legendre_leaves, config, rng)
    assert report.node([1]).columns == 4
    assert all(n.loo_error is None for n in report.nodes)
    points = rng.uniform(-1, 1, (200, 4))
    assert relative_error(ttn, product_oracle.function, points) < 1e-8


def test_learn_with_adaptive_leaf_basis(product_oracle, balanced_four, rng):
    config = LearnerConfig(tolerance=1e-6, adaptive_basis=True, max_degree=6, workers=1)
    leaves = leaf_space_sequences(ProductMeasure.uniform(4), config)
    ttn, report = learn(product_oracle, balanced_four, leaves, config, rng)
    assert [report.node([v]).degree for v in range(1, 5)] == [2, 2, 2, 2]
    assert not any(n.degree_exhausted for n in report.nodes)
    assert report.evaluations == product_oracle.calls
    points = rng.uniform(-1, 1, (200, 4))
    assert relative_error(ttn, product_oracle.function, points) < 1e-6


def test_learning_is_independent_of_worker_count(balanced_four, legendre_leaves):
    results = []
    for workers in (1, 4):
        oracle = CountingOracle(sum_of_products, 4)
        config = LearnerConfig(tolerance=1e-6, workers=workers)
        rng = np.random.default_rng(5)
        results.append(learn(oracle, balanced_four, legendre_leaves, config, rng))
    (first, first_report), (second, second_report) = results
    assert first_report == second_report
    for node in balanced_four.nodes:
        assert np.array_equal(first.tensor(node), second.tensor(node))


def test_failing_oracle_raises_learning_error(balanced_four, legendre_leaves, quick_config, rng):
    def broken(x):
        raise RuntimeError('simulation crashed')

    oracle = CountingOracle(broken, 4)
    with pytest.raises(LearningError) as error:
        learn(oracle, balanced_four, legendre_leaves, quick_config, rng)
    assert error.value.node == (1,)
    assert error.value.partial_report.nodes == []
    assert 'simulation crashed' in str(error.value)


def test_run_parallel_keeps_task_order():
    tasks = [lambda i=i: i * i for i in range(6)]
    assert run_parallel(tasks, 3) == [0, 1, 4, 9, 16, 25]
    assert run_parallel(tasks, 1) == [0, 1, 4, 9, 16, 25]


def test_leaf_spaces_of_learned_network(product_oracle, balanced_four, quick_config, rng):
    leaves = {v: [legendre_basis(2, variable=v)] for v in range(1, 5)}
    ttn, _ = learn(product_oracle, balanced_four, leaves, quick_config, rng)
    assert all(ttn.leaf_spaces[v].degree == 2 for v in range(1, 5))


def test_tolerances_below_round_off_are_floored(
    product_oracle, balanced_four, legendre_leaves, rng
):
    config = LearnerConfig(tolerance=1e-16, adaptive_pca=False, workers=1)
    ttn, report = learn(product_oracle, balanced_four, legendre_leaves, config, rng)
    assert all(rank == 1 for rank in report.ranks.values())
    leaves_and_pairs = [n for n in report.nodes if n.level > 0]
    assert all(n.tolerance_pca == config.pca_tolerance_floor for n in leaves_and_pairs)
    assert all(
        n.tolerance_dis == config.basis_tolerance_floor for n in leaves_and_pairs if n.degree
    )
    points = rng.uniform(-1, 1, (200, 4))
    assert relative_error(ttn, product_oracle.function, points) < 1e-10


HENON_HEILES_RANKS = {
    '1': 3,
    '2': 4,
    '3': 4,
    '4': 4,
    '5': 4,
    '6': 4,
    '7': 4,
    '8': 3,
    '1,2': 3,
    '3,4': 4,
    '5,6': 4,
    '7,8': 3,
    '1,2,3,4': 3,
    '5,6,7,8': 3,
    '1,2,3,4,5,6,7,8': 1,
}


def test_henon_heiles_ranks_do_not_exceed_exact_ranks(rng):
    config = LearnerConfig(
        tolerance=1e-14,
        degree=4,
        adaptive_pca=False,
        stability=StabilityParams(repetitions=20),
        workers=1,
    )
    measure = ProductMeasure.gaussian(8)
    oracle = henon_heiles(8)
    leaves = leaf_space_sequences(measure, config)
    ttn, report = learn(oracle, balanced_binary(8), leaves, config, rng)
    assert all(rank <= HENON_HEILES_RANKS[node] for node, rank in report.ranks.items())
    assert report.storage <= 461
    points = rng.standard_normal((500, 8))
    assert relative_error(ttn, oracle.function, points) < 1e-10
