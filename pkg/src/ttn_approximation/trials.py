# SPDX-License-Identifier: Apache-2.0

"""Repeated seeded trials, test errors and quantile reports."""

import csv
import io
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field

from benchmarks.functions import Benchmark, make_benchmark
from ttn_core.dimension_tree import (
    DimensionTree,
    balanced_binary,
    random_balanced,
    random_binary,
    validate,
)
from ttn_core.errors import InvalidTreeError, LearningError
from ttn_core.learner import learn, leaf_space_sequences, run_parallel
from ttn_core.measures_bases import ProductMeasure
from ttn_core.oracle import CountingOracle
from ttn_core.tensor_network import TreeTensorNetwork, save_model
from ttn_core.tree_adaptation import estimate_rank, learn_with_tree_adaptation
from ttn_core.utils import nearest_rank_quantile

from .experiment_config import ExperimentConfig, TreeMode


logger = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)

# log10 of an exactly zero error is reported at this floor.
LOG_ERROR_FLOOR = -300.0

CSV_COLUMNS = [
    'tol',
    'log_err_q10',
    'log_err_q50',
    'log_err_q90',
    'S_q10',
    'S_q50',
    'S_q90',
    'n_q10',
    'n_q50',
    'n_q90',
    'n_total_q10',
    'n_total_q50',
    'n_total_q90',
]


@dataclass(frozen=True)
class ErrorEstimate:
    value: float
    relative: bool


def evaluate_test_error(
    function: Union[CountingOracle, Callable[[np.ndarray], np.ndarray]],
    ttn: TreeTensorNetwork,
    n_test: int,
    rng: np.random.Generator,
    measure: Optional[ProductMeasure] = None,
    relative: bool = True,
) -> ErrorEstimate:
    """Root-mean-square error of ``ttn`` against ``function`` on n_test i.i.d. points.

    Test points are drawn from ``measure`` (default: the product of the leaf
    marginals of ``ttn``). Evaluations go to the raw function, so a counting
    oracle's counter is left untouched. When the empirical norm of u is zero
    the absolute error is returned with ``relative=False``.
    """
    if n_test < 1:
        raise ValueError(f'n_test must be at least 1, got {n_test}')
    if measure is None:
        measure = ProductMeasure(
            marginals=tuple(ttn.leaf_spaces[v].marginal for v in sorted(ttn.leaf_spaces))
        )
    points = measure.sample(rng, n_test)
    raw = function.function if isinstance(function, CountingOracle) else function
    exact = np.asarray(raw(points), dtype=float).reshape(-1)
    approximation = np.asarray(ttn.evaluate(points), dtype=float).reshape(-1)
    squared_error = float(np.sum((exact - approximation) ** 2))
    if not relative:
        return ErrorEstimate(math.sqrt(squared_error / n_test), relative=False)
    norm = float(np.sum(exact**2))
    if norm == 0.0:
        logger.warning('Test values are all zero; reporting the absolute test error')
        return ErrorEstimate(math.sqrt(squared_error / n_test), relative=False)
    return ErrorEstimate(math.sqrt(squared_error / norm), relative=True)


def test_error(
    function: Union[CountingOracle, Callable[[np.ndarray], np.ndarray]],
    ttn: TreeTensorNetwork,
    n_test: int = 1000,
    rng: Optional[np.random.Generator] = None,
    measure: Optional[ProductMeasure] = None,
    relative: bool = True,
) -> float:
    """Relative (or absolute) root-mean-square test error; see :func:`evaluate_test_error`."""
    rng = rng if rng is not None else np.random.default_rng()
    return evaluate_test_error(function, ttn, n_test, rng, measure, relative).value


test_error.__test__ = False


class TrialResult(BaseModel):
    tolerance: float
    trial: int
    succeeded: bool
    error: Optional[float] = Field(default=None, description='Test error eps(u*)')
    log_error: Optional[float] = Field(default=None, description='log10 of the test error')
    error_is_absolute: bool = Field(
        default=False, description='True when the absolute error was reported'
    )
    storage: Optional[int] = Field(default=None, description='Storage complexity S')
    evaluations: int = Field(default=0, description='n')
    optimization_evaluations: int = Field(default=0, description='n_optim')
    total_evaluations: int = Field(default=0, description='n_total = n + n_optim')
    oracle_calls: int = Field(default=0, description='Calls counted by the oracle')
    tolerance_met: bool = True
    ranks: dict[str, int] = Field(default_factory=dict)
    tree: list[list[int]] = Field(default_factory=list)
    leaf_degrees: dict[str, int] = Field(default_factory=dict)
    first_pairing: Optional[list[list[int]]] = Field(
        default=None, description='Level-1 pairing chosen by tree adaptation'
    )
    failure: Optional[str] = None
    failed_node: Optional[list[int]] = None


class Quantiles(BaseModel):
    q10: Optional[float] = None
    q50: Optional[float] = None
    q90: Optional[float] = None

    @classmethod
    def of(cls, values: list[float]) -> 'Quantiles':
        if not values:
            return cls()
        q10, q50, q90 = (nearest_rank_quantile(values, q) for q in QUANTILES)
        return cls(q10=q10, q50=q50, q90=q90)


class SummaryRow(BaseModel):
    tolerance: float
    trials: int
    succeeded: int
    log_error: Quantiles
    storage: Quantiles
    evaluations: Quantiles
    total_evaluations: Quantiles


class BenchmarkReport(BaseModel):
    config: dict = Field(default_factory=dict)
    trials: list[TrialResult] = Field(default_factory=list)
    summary: list[SummaryRow] = Field(default_factory=list)
    all_succeeded: bool = True
    wall_time: float = Field(default=0.0, description='Seconds; ignored by equality')

    def __eq__(self, other):
        if not isinstance(other, BenchmarkReport):
            return NotImplemented
        return self.model_dump(exclude={'wall_time'}) == other.model_dump(exclude={'wall_time'})


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Stream of one trial; depends only on (seed, trial), never on the trial count."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def load_tree(path: Union[str, Path]) -> DimensionTree:
    """Read a dimension tree stored as a YAML/JSON list of nodes (lists of variables)."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise InvalidTreeError(f'Cannot read tree file {path}: {e}') from e
    if isinstance(document, dict):
        document = document.get('tree', document.get('nodes'))
    if not isinstance(document, list):
        raise InvalidTreeError(f'Tree file {path} must hold a list of nodes')
    return validate(document)


def build_tree(
    config: ExperimentConfig, dimension: int, rng: np.random.Generator
) -> DimensionTree:
    mode = config.tree_mode
    if mode == TreeMode.BALANCED:
        return balanced_binary(dimension)
    if mode == TreeMode.RT:
        return random_binary(dimension, rng)
    if mode == TreeMode.RBT:
        return random_balanced(dimension, rng)
    if mode == TreeMode.FILE:
        tree = load_tree(config.tree_path)
        if tree.dimension != dimension:
            raise InvalidTreeError(
                f'Tree in {config.tree_path} has dimension {tree.dimension}, '
                f'the function has {dimension}'
            )
        return tree
    raise ValueError(f'Tree mode {mode.value} does not build a tree up front')


def _benchmark(config: ExperimentConfig) -> Benchmark:
    return make_benchmark(config.function, config.dimension, **config.function_args)


def _failed(tolerance: float, trial: int, oracle: CountingOracle, error: Exception) -> TrialResult:
    partial = getattr(error, 'partial_report', None)
    return TrialResult(
        tolerance=tolerance,
        trial=trial,
        succeeded=False,
        evaluations=partial.evaluations if partial is not None else 0,
        optimization_evaluations=partial.optimization_evaluations if partial is not None else 0,
        total_evaluations=partial.total_evaluations if partial is not None else 0,
        oracle_calls=oracle.calls,
        tolerance_met=False,
        failure=f'{type(error).__name__}: {error}',
        failed_node=list(error.node) if isinstance(error, LearningError) else None,
    )


def run_trial(
    config: ExperimentConfig, tolerance: float, trial: int
) -> tuple[TrialResult, Optional[TreeTensorNetwork]]:
    """One approximation at ``tolerance`` with a fresh oracle.

    Failures are logged and recorded on the result, never raised.
    """
    benchmark = _benchmark(config)
    oracle = benchmark.oracle
    tree_rng, learn_rng, test_rng = trial_rng(config.seed, trial).spawn(3)
    learner = config.learner.model_copy(update={'tolerance': tolerance})
    sequences = leaf_space_sequences(benchmark.measure, learner)
    try:
        if config.tree_mode == TreeMode.SLO:
            _, ttn, report = learn_with_tree_adaptation(
                oracle, sequences, learner, config.tree_adaptation, learn_rng
            )
        else:
            tree = build_tree(config, benchmark.measure.dimension, tree_rng)
            ttn, report = learn(oracle, tree, sequences, learner, learn_rng)
        error = evaluate_test_error(
            oracle,
            ttn,
            config.n_test,
            test_rng,
            benchmark.measure,
            relative=not config.absolute_error,
        )
    except Exception as e:
        logger.error(f'Trial {trial} at tolerance {tolerance:g} failed: {e}')
        return _failed(tolerance, trial, oracle, e), None

    log_error = math.log10(error.value) if error.value > 0 else LOG_ERROR_FLOOR
    result = TrialResult(
        tolerance=tolerance,
        trial=trial,
        succeeded=True,
        error=error.value,
        log_error=log_error,
        error_is_absolute=not error.relative,
        storage=report.storage,
        evaluations=report.evaluations,
        optimization_evaluations=report.optimization_evaluations,
        total_evaluations=report.total_evaluations,
        oracle_calls=oracle.calls,
        tolerance_met=report.tolerance_met,
        ranks=report.ranks,
        tree=report.tree,
        leaf_degrees={str(v): space.degree for v, space in sorted(ttn.leaf_spaces.items())},
        first_pairing=report.pairings[0] if report.pairings else None,
    )
    logger.info(
        f'Trial {trial} at tolerance {tolerance:g}: log10 error {log_error:.2f}, '
        f'S = {result.storage}, n = {result.evaluations}, n_total = {result.total_evaluations}'
    )
    return result, ttn


def summarize(tolerance: float, results: list[TrialResult]) -> SummaryRow:
    succeeded = [r for r in results if r.succeeded]
    return SummaryRow(
        tolerance=tolerance,
        trials=len(results),
        succeeded=len(succeeded),
        log_error=Quantiles.of([r.log_error for r in succeeded]),
        storage=Quantiles.of([r.storage for r in succeeded]),
        evaluations=Quantiles.of([r.evaluations for r in succeeded]),
        total_evaluations=Quantiles.of([r.total_evaluations for r in succeeded]),
    )


def run_trials(
    config: ExperimentConfig, model_path: Optional[Union[str, Path]] = None
) -> BenchmarkReport:
    """Run ``config.trials`` trials per tolerance and aggregate nearest-rank quantiles.

    Trial t uses the stream of (seed, t) at every tolerance. When
    ``model_path`` is given, the model of the first successful trial at the
    last tolerance is saved there.
    """
    started = time.perf_counter()
    jobs = [(tol, trial) for tol in config.tolerances for trial in range(config.trials)]
    outcomes = run_parallel(
        [lambda tol=tol, trial=trial: run_trial(config, tol, trial) for tol, trial in jobs],
        config.trial_workers,
    )
    results = [result for result, _ in outcomes]

    if model_path is not None:
        last = config.tolerances[-1]
        saved = next(
            (ttn for (tol, _), (_, ttn) in zip(jobs, outcomes) if tol == last and ttn is not None),
            None,
        )
        if saved is not None:
            save_model(model_path, saved)
        else:
            logger.warning(f'No successful trial at tolerance {last:g}; no model written')

    summary = [
        summarize(tol, [r for r in results if r.tolerance == tol]) for tol in config.tolerances
    ]
    report = BenchmarkReport(
        config=config.model_dump(mode='json'),
        trials=results,
        summary=summary,
        all_succeeded=all(r.succeeded for r in results),
        wall_time=time.perf_counter() - started,
    )
    failed = sum(not r.succeeded for r in results)
    if failed:
        logger.error(f'{failed} of {len(results)} trials failed')
    return report


def _cell(value: Optional[float]) -> str:
    return '' if value is None else repr(value)


def summary_rows(report: BenchmarkReport) -> list[dict[str, str]]:
    rows = []
    for row in report.summary:
        cells = {'tol': repr(row.tolerance)}
        for prefix, quantiles in (
            ('log_err', row.log_error),
            ('S', row.storage),
            ('n', row.evaluations),
            ('n_total', row.total_evaluations),
        ):
            for name in ('q10', 'q50', 'q90'):
                cells[f'{prefix}_{name}'] = _cell(getattr(quantiles, name))
        rows.append(cells)
    return rows


def report_csv(report: BenchmarkReport) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator='\n')
    writer.writeheader()
    writer.writerows(summary_rows(report))
    return buffer.getvalue()


def write_reports(report: BenchmarkReport, csv_path: Union[str, Path]) -> Path:
    """Write the quantile table to ``csv_path`` and the full report next to it as JSON."""
    csv_path = Path(csv_path)
    csv_path.write_text(report_csv(report), encoding='utf-8')
    json_path = csv_path.with_suffix('.json')
    json_path.write_text(report.model_dump_json(indent=2), encoding='utf-8')
    logger.info(f'Wrote {csv_path} and {json_path}')
    return json_path


class RankTrial(BaseModel):
    trial: int
    rank: int
    evaluations: int
    coarse: bool = Field(description='True if the caps were hit before eps_c was met')


class RankReport(BaseModel):
    function: str
    alpha: list[int]
    coarse_tolerance: float
    trials: list[RankTrial]
    rank: Quantiles


def run_rank_trials(
    config: ExperimentConfig, alpha: list[int], coarse_tolerance: Optional[float] = None
) -> RankReport:
    """Estimate the eps_c-rank of ``alpha`` once per trial, each with its own seed."""
    coarse_tolerance = coarse_tolerance or config.tree_adaptation.coarse_tolerance
    params = config.tree_adaptation
    trials = []
    for trial in range(config.trials):
        benchmark = _benchmark(config)
        dimension = benchmark.measure.dimension
        if not alpha or any(v < 1 or v > dimension for v in alpha) or len(alpha) >= dimension:
            raise ValueError(f'alpha {alpha} is not a proper subset of 1..{dimension}')
        estimate = estimate_rank(
            benchmark.oracle,
            alpha,
            coarse_tolerance,
            params.alpha_cap,
            params.complement_cap,
            benchmark.measure,
            trial_rng(config.seed, trial),
            min_columns=params.min_columns,
        )
        trials.append(
            RankTrial(
                trial=trial,
                rank=estimate.rank,
                evaluations=estimate.evaluations,
                coarse=estimate.coarse,
            )
        )
    return RankReport(
        function=config.function,
        alpha=sorted(alpha),
        coarse_tolerance=coarse_tolerance,
        trials=trials,
        rank=Quantiles.of([t.rank for t in trials]),
    )


def rank_report_json(report: RankReport) -> str:
    return report.model_dump_json(indent=2)
