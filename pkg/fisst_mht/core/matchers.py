"""Truth-to-track matching and the scalar scores built on it."""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from fisst_mht.exceptions import DimensionError


def match_tracks(estimates: np.ndarray, truth: np.ndarray) -> List[Tuple[int, int]]:
    """
    Pair estimated and true positions by minimum total squared distance.

    Args:
        estimates: Estimated positions, shape (a, d)
        truth: True positions, shape (b, d)

    Returns:
        min(a, b) pairs of (estimate index, truth index)
    """
    if len(estimates) == 0 or len(truth) == 0:
        return []
    if estimates.shape[1] != truth.shape[1]:
        raise DimensionError(f"estimates have dimension {estimates.shape[1]}, truth {truth.shape[1]}")
    cost = cdist(estimates, truth, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols)]


def assignment_rmse(estimates: np.ndarray, truth: np.ndarray) -> Optional[float]:
    """
    Root-mean-square position error over the optimally matched pairs.

    Args:
        estimates: Estimated positions, shape (a, d)
        truth: True positions, shape (b, d)

    Returns:
        The RMSE, or None when nothing can be matched
    """
    pairs = match_tracks(estimates, truth)
    if not pairs:
        return None
    squared = [float(np.sum((estimates[i] - truth[j]) ** 2)) for i, j in pairs]
    return math.sqrt(math.fsum(squared) / len(squared))


def map_cardinality(rho: Dict[int, float]) -> int:
    """Most probable target count; the smaller count wins a tie."""
    return min(rho, key=lambda n: (-rho[n], n))


def cardinality_error(estimated: int, true: int) -> int:
    return abs(estimated - true)
