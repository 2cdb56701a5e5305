# SPDX-License-Identifier: Apache-2.0

from typing import Any, Optional


class InvalidTreeError(ValueError):
    """Raised when a node set does not form a dimension partition tree."""


class DimensionMismatchError(ValueError):
    """Raised when a point does not match the variables of a feature space."""


class InvalidIntervalError(ValueError):
    """Raised for a degenerate or reversed interval."""


class ModelFormatError(ValueError):
    """Raised when a model document is malformed or inconsistent."""


class UnsupportedVersionError(ValueError):
    """Raised when a model document carries an unsupported format version."""


class CapacityExceededError(ValueError):
    """Raised when an explicit full-tensor computation would exceed the configured cap."""


class NormalizationError(ValueError):
    """Raised when a basis expected to be orthonormal is not."""


class SingularGramError(RuntimeError):
    """Raised when a weighted least-squares system is not certified stable."""


class StabilityError(RuntimeError):
    """Raised when no stable sample was found within the round limit."""

    def __init__(self, space_label: str, best_criterion: float, rounds: int):
        self.space_label = space_label
        self.best_criterion = best_criterion
        self.rounds = rounds
        super().__init__(
            f'No stable sample for space {space_label} after {rounds} rounds '
            f'(best ||G - I||_2 = {best_criterion:.4g})'
        )


class OracleError(RuntimeError):
    """Raised when the function oracle fails on a batch of points."""

    def __init__(self, message: str, column: Optional[int] = None):
        self.column = column
        if column is not None:
            message = f'{message} (grid column {column})'
        super().__init__(message)


class LearningError(RuntimeError):
    """Raised when a node of the learning procedure fails; carries the partial report."""

    def __init__(self, node: tuple[int, ...], cause: Exception, partial_report: Any = None):
        self.node = node
        self.partial_report = partial_report
        super().__init__(f'Learning failed at node {list(node)}: {cause}')
