# SPDX-License-Identifier: Apache-2.0

import logging
import threading
from typing import Callable, Optional

import numpy as np

from .errors import OracleError


logger = logging.getLogger(__name__)


class CountingOracle:
    """Batch evaluator of a function u on X with an exact, monotone evaluation counter.

    The wrapped function takes points of shape ``(n, d)`` and returns ``n``
    values. Counting is guarded by a lock so that concurrent learners sharing one
    oracle never undercount.
    """

    def __init__(
        self, function: Callable[[np.ndarray], np.ndarray], dimension: int, name: str = 'u'
    ):
        self.function = function
        self.dimension = dimension
        self.name = name
        self._calls = 0
        self._lock = threading.Lock()

    def __repr__(self):
        return f'<CountingOracle {self.name} d={self.dimension} calls={self.calls}>'

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def __call__(self, points: np.ndarray, column: Optional[int] = None) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dimension:
            raise OracleError(
                f'oracle {self.name} expects points of shape (n, {self.dimension}), '
                f'got {points.shape}',
                column,
            )
        try:
            values = np.asarray(self.function(points), dtype=float).reshape(-1)
        except Exception as e:
            raise OracleError(f'oracle {self.name} failed: {e}', column) from e
        if values.shape[0] != points.shape[0]:
            raise OracleError(
                f'oracle {self.name} returned {values.shape[0]} values '
                f'for {points.shape[0]} points',
                column,
            )
        if not np.all(np.isfinite(values)):
            raise OracleError(f'oracle {self.name} returned non-finite values', column)
        with self._lock:
            self._calls += points.shape[0]
        return values
