"""Tests for truth-to-track matching."""

import math

import numpy as np
import pytest

from fisst_mht.core.matchers import assignment_rmse, cardinality_error, map_cardinality, match_tracks
from fisst_mht.exceptions import DimensionError


def test_match_tracks_minimizes_total_distance():
    """Crossed estimates are paired with their nearest truths."""
    estimates = np.array([[0.0, 0.0], [10.0, 0.0]])
    truth = np.array([[10.0, 1.0], [0.0, 0.0]])
    assert match_tracks(estimates, truth) == [(0, 1), (1, 0)]
    assert assignment_rmse(estimates, truth) == pytest.approx(math.sqrt(0.5))


def test_unequal_counts_match_the_smaller_set():
    """Extra estimates stay unmatched."""
    estimates = np.array([[0.0], [5.0], [9.0]])
    truth = np.array([[8.5]])
    assert match_tracks(estimates, truth) == [(2, 0)]
    assert assignment_rmse(estimates, truth) == pytest.approx(0.5)


def test_empty_sets():
    """Nothing to match gives no pairs and no RMSE."""
    assert match_tracks(np.zeros((0, 2)), np.ones((2, 2))) == []
    assert assignment_rmse(np.ones((1, 2)), np.zeros((0, 2))) is None


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        match_tracks(np.zeros((1, 2)), np.zeros((1, 3)))


def test_map_cardinality():
    """Most probable count; ties go to the smaller count."""
    assert map_cardinality({0: 0.1, 1: 0.7, 2: 0.2}) == 1
    assert map_cardinality({2: 0.4, 1: 0.4, 0: 0.2}) == 1
    assert cardinality_error(3, 1) == 2
    assert cardinality_error(0, 0) == 0
