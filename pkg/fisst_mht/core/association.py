"""Enumeration of the discrete hypothesis alphabets.

Data associations, birth hypotheses and survival hypotheses are produced in a
deterministic order so that weight traces reproduce across runs.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from fisst_mht.core.belief import NULL_MEASUREMENT, Belief, mahalanobis_squared
from fisst_mht.core.models import BirthModel, MeasurementModel
from fisst_mht.exceptions import ConfigError, ExplosionGuardError, RangeError

Gate = Callable[[int, int], bool]
"""gate(target index, measurement index) -> whether the pair may be associated."""

DEFAULT_GATE_PROBABILITY = 0.999
DEFAULT_COUNT_BOUND = 10_000_000


@dataclass(frozen=True)
class DataAssociation:
    """Per-target measurement index (or NULL_MEASUREMENT) for m measurements."""

    assignments: Tuple[int, ...]
    m: int

    def __post_init__(self) -> None:
        assigned = [j for j in self.assignments if j != NULL_MEASUREMENT]
        if len(set(assigned)) != len(assigned):
            raise RangeError(f"measurement assigned twice in {self.assignments}")
        if any(not 0 <= j < self.m for j in assigned):
            raise RangeError(f"measurement index outside [0, {self.m}) in {self.assignments}")

    @property
    def n(self) -> int:
        return len(self.assignments)

    @property
    def detected(self) -> int:
        return sum(1 for j in self.assignments if j != NULL_MEASUREMENT)

    @property
    def clutter(self) -> Tuple[int, ...]:
        used = set(self.assignments)
        return tuple(j for j in range(self.m) if j not in used)

    @property
    def k(self) -> int:
        return self.m - self.detected


@dataclass(frozen=True)
class BirthHypothesis:
    """A specific set of pixels asserted to spawn one target each, stored sorted."""

    pixels: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        canonical = tuple(sorted(self.pixels))
        if len(set(canonical)) != len(canonical):
            raise RangeError(f"birth pixels must be distinct, got {self.pixels}")
        object.__setattr__(self, "pixels", canonical)

    @property
    def p(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class SurvivalHypothesis:
    """The surviving subset of the r current track slots."""

    survivors: Tuple[int, ...]
    r: int

    def __post_init__(self) -> None:
        if any(not 0 <= i < self.r for i in self.survivors):
            raise RangeError(f"survivor index outside [0, {self.r}) in {self.survivors}")
        if len(set(self.survivors)) != len(self.survivors):
            raise RangeError(f"survivors must be distinct, got {self.survivors}")

    @property
    def p(self) -> int:
        return len(self.survivors)


@dataclass(frozen=True)
class BirthPolicy:
    """Which birth hypotheses to enumerate each scan.

    ``none`` keeps only the empty hypothesis, ``all_pixels`` every pixel subset of
    size <= max_p, ``measurement_gated`` only subsets of pixels containing a
    measurement.
    """

    kind: Literal["none", "all_pixels", "measurement_gated"] = "measurement_gated"
    max_p: int = 1
    cap: int = 100_000

    def __post_init__(self) -> None:
        if self.kind not in ("none", "all_pixels", "measurement_gated"):
            raise ConfigError(f"unknown birth policy {self.kind!r}")
        if self.max_p < 0:
            raise ConfigError("max_p must be non-negative")


def enumerate_associations(n: int, m: int, gate: Optional[Gate] = None) -> List[DataAssociation]:
    """All injective partial maps from n targets to m measurements.

    Options per target are ordered measurement 0..m-1 then phi, and the result is
    lexicographic over targets. With a gate only passing pairs are considered.
    """
    if n < 0 or m < 0:
        raise RangeError("n and m must be non-negative")
    options = [
        [j for j in range(m) if gate is None or gate(i, j)] + [NULL_MEASUREMENT]
        for i in range(n)
    ]

    def walk(i: int, used: Tuple[int, ...]) -> Iterator[Tuple[int, ...]]:
        if i == n:
            yield ()
            return
        for j in options[i]:
            if j != NULL_MEASUREMENT and j in used:
                continue
            for rest in walk(i + 1, used + ((j,) if j != NULL_MEASUREMENT else ())):
                yield (j,) + rest

    return [DataAssociation(assignments, m) for assignments in walk(0, ())]


def count_associations(n: int, m: int, bound: int = DEFAULT_COUNT_BOUND) -> int:
    """Closed form sum_d C(n, d) m! / (m - d)! of the ungated association count."""
    if n < 0 or m < 0:
        raise RangeError("n and m must be non-negative")
    total = sum(math.comb(n, d) * math.perm(m, d) for d in range(min(n, m) + 1))
    if total > bound:
        raise ExplosionGuardError(f"{total} associations for n={n}, m={m} exceeds bound {bound}")
    return total


def ellipsoidal_gate(beliefs: Sequence[Belief], measurements: np.ndarray,
                     meas: MeasurementModel,
                     probability: float = DEFAULT_GATE_PROBABILITY) -> Gate:
    """Mahalanobis gate at the chi-square quantile of the measurement dimension."""
    threshold = float(chi2.ppf(probability, df=meas.dim))
    passing = {
        (i, j)
        for i, belief in enumerate(beliefs)
        for j, z in enumerate(measurements)
        if mahalanobis_squared(belief, z, meas) <= threshold
    }
    return lambda i, j: (i, j) in passing


def _count_subsets(size: int, max_p: int) -> int:
    return sum(math.comb(size, p) for p in range(min(size, max_p) + 1))


def enumerate_birth_hypotheses(birth: BirthModel, measurements: np.ndarray,
                               policy: BirthPolicy) -> List[BirthHypothesis]:
    """Birth hypotheses allowed by the policy, by size then lexicographically."""
    if policy.kind == "none" or policy.max_p == 0:
        return [BirthHypothesis()]
    if policy.kind == "all_pixels":
        candidates: List[int] = list(range(birth.M))
    else:
        pixels = {birth.pixel_of(z) for z in np.atleast_2d(measurements) if np.size(z)}
        candidates = sorted(p for p in pixels if p is not None)
    total = _count_subsets(len(candidates), policy.max_p)
    if total > policy.cap:
        raise ExplosionGuardError(f"{total} birth hypotheses exceed cap {policy.cap}")
    return [
        BirthHypothesis(subset)
        for p in range(min(len(candidates), policy.max_p) + 1)
        for subset in itertools.combinations(candidates, p)
    ]


def enumerate_survival(r: int, cap: int = 4096) -> List[SurvivalHypothesis]:
    """All 2^r survivor subsets, largest first, then lexicographic."""
    if r < 0:
        raise RangeError("r must be non-negative")
    if 2 ** r > cap:
        raise ExplosionGuardError(f"2^{r} survival hypotheses exceed cap {cap}")
    return [
        SurvivalHypothesis(subset, r)
        for p in range(r, -1, -1)
        for subset in itertools.combinations(range(r), p)
    ]
