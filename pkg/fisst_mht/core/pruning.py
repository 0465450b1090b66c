"""Hypothesis-set control: top-K, weight threshold and the all-births-detected rule.

Dropping hypotheses whose births were missed on their creation scan is safe in
practice: each such hypothesis has a companion without the missed birth whose
weight is larger by 1 / ((1 - p_D) alpha), and the gap persists to the next scan.
:func:`undetected_birth_pair` and :func:`grandchild_pair` build those companions
so the ratios can be audited.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from fisst_mht.core.association import BirthHypothesis, DataAssociation, SurvivalHypothesis
from fisst_mht.core.belief import NULL_MEASUREMENT
from fisst_mht.core.hypothesis import (
    Hypothesis,
    HypothesisForest,
    predict_hypothesis,
    update_hypothesis,
)
from fisst_mht.core.models import ScenarioModels
from fisst_mht.exceptions import ConfigError, RangeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruningPolicy:
    max_hypotheses: int = 100
    min_weight: float = 0.0
    drop_undetected_births: bool = False

    def __post_init__(self) -> None:
        if self.max_hypotheses < 1:
            raise ConfigError("max_hypotheses must be at least 1")
        if not 0.0 <= self.min_weight < 1.0:
            raise ConfigError(f"min_weight must lie in [0, 1), got {self.min_weight}")


def has_undetected_birth(h: Hypothesis) -> bool:
    """True if some birth-origin track was assigned phi on its creation scan."""
    return any(t.label.is_undetected_birth for t in h.tracks)


def _ranked(forest: HypothesisForest) -> List[int]:
    return sorted(range(len(forest)),
                  key=lambda i: (-forest.hypotheses[i].log_weight, forest.hypotheses[i].label_key))


def _kept_indices(forest: HypothesisForest, policy: PruningPolicy) -> List[int]:
    ranked = _ranked(forest)
    kept = ranked
    if policy.drop_undetected_births:
        kept = [i for i in kept if not has_undetected_birth(forest.hypotheses[i])]
    if policy.min_weight > 0.0:
        threshold = math.log(policy.min_weight)
        kept = [i for i in kept if forest.hypotheses[i].log_weight >= threshold]
    kept = kept[:policy.max_hypotheses]
    return kept or ranked[:1]


def prune(forest: HypothesisForest, policy: PruningPolicy) -> HypothesisForest:
    """Survivors of the policy in weight-descending order, renormalized.

    The highest-weight hypothesis is kept when the policy would remove everything.
    """
    kept = _kept_indices(forest, policy)
    pruned = replace(forest, hypotheses=tuple(forest.hypotheses[i] for i in kept))
    return pruned.normalized()


def pruning_error_bound(forest_pre_prune: HypothesisForest, policy: PruningPolicy) -> float:
    """Total normalized weight the policy removes."""
    kept = set(_kept_indices(forest_pre_prune, policy))
    weights = forest_pre_prune.normalized().weights
    return float(math.fsum(w for i, w in enumerate(weights) if i not in kept))


def undetected_birth_ratio(models: ScenarioModels) -> float:
    """(1 - p_D) alpha: weight of one undetected birth relative to its absence."""
    return (1.0 - models.measurement.p_D) * models.birth.alpha


def undetected_birth_pair(parent: Hypothesis, Z: np.ndarray, assignments: Sequence[int],
                          birth_pixels: Sequence[int], undetected_pixel: int,
                          models: ScenarioModels, scan_index: int
                          ) -> Tuple[Hypothesis, Hypothesis]:
    """The children v (extra undetected birth) and v' (without it) of one parent.

    ``assignments`` covers the parent's tracks followed by ``birth_pixels`` in
    sorted order; every track of the parent survives.
    """
    if undetected_pixel in birth_pixels:
        raise RangeError(f"pixel {undetected_pixel} is already a birth pixel")
    survival = SurvivalHypothesis(tuple(range(parent.n)), parent.n)
    m = len(Z)
    with_births = BirthHypothesis(tuple(birth_pixels))
    v_prime_pred = predict_hypothesis(parent, with_births, survival, models, scan_index)
    v_prime = update_hypothesis(v_prime_pred, DataAssociation(tuple(assignments), m), Z,
                                models, scan_index)
    extended = BirthHypothesis(tuple(birth_pixels) + (undetected_pixel,))
    v_pred = predict_hypothesis(parent, extended, survival, models, scan_index)
    by_label = dict(zip(v_prime_pred.labels, assignments))
    v_assignments = tuple(by_label.get(label, NULL_MEASUREMENT) for label in v_pred.labels)
    v = update_hypothesis(v_pred, DataAssociation(v_assignments, m), Z, models, scan_index)
    return v, v_prime


def grandchild_pair(v: Hypothesis, v_prime: Hypothesis, Z: np.ndarray, z_star: int,
                    assignments: Sequence[int], models: ScenarioModels, scan_index: int
                    ) -> Tuple[Hypothesis, Hypothesis]:
    """Children gamma of v and gamma' of v' sharing every association but z_star.

    In gamma, z_star goes to v's undetected birth; in gamma' it goes to a new birth
    in z_star's pixel. ``assignments`` maps v''s tracks (in storage order) to
    measurements and must leave z_star unassigned.
    """
    if z_star in assignments:
        raise RangeError("z_star must not be assigned to an existing track")
    pixel = models.birth.pixel_of(Z[z_star])
    if pixel is None:
        raise RangeError("z_star lies outside the field of view")
    m = len(Z)
    by_label = dict(zip(v_prime.labels, assignments))
    undetected = [t.label for t in v.tracks if t.label.is_undetected_birth]
    if len(undetected) != 1:
        raise RangeError("v must carry exactly one undetected birth")

    survival = SurvivalHypothesis(tuple(range(v.n)), v.n)
    gamma_pred = predict_hypothesis(v, BirthHypothesis(), survival, models, scan_index)
    gamma_assignments = tuple(
        z_star if label == undetected[0] else by_label[label] for label in gamma_pred.labels)
    gamma = update_hypothesis(gamma_pred, DataAssociation(gamma_assignments, m), Z,
                              models, scan_index)

    survival = SurvivalHypothesis(tuple(range(v_prime.n)), v_prime.n)
    gamma_prime_pred = predict_hypothesis(v_prime, BirthHypothesis((pixel,)), survival,
                                          models, scan_index)
    gamma_prime = update_hypothesis(
        gamma_prime_pred, DataAssociation(tuple(assignments) + (z_star,), m), Z,
        models, scan_index)
    return gamma, gamma_prime
