"""Rectangular linear assignment (Hungarian) on dense cost matrices."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def solve(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of rows to columns.

    Every row (or every column, whichever side is smaller) is assigned exactly
    once. Pairs are returned sorted by row index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] == 0 or cost.shape[1] == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))
