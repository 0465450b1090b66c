"""Hypothesis-oriented FISST recursion and the HOMHT weight rule.

A :class:`HypothesisForest` is the full multi-target pdf: a weighted collection
of :class:`Hypothesis` objects, each a set of labelled single-target beliefs.
One call to :func:`fisst_step` expands every parent over all (survival, birth,
association) combinations, normalizes, merges children with identical track
labels and prunes.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from fisst_mht.core.association import (
    BirthHypothesis,
    BirthPolicy,
    DataAssociation,
    Gate,
    SurvivalHypothesis,
    ellipsoidal_gate,
    enumerate_associations,
    enumerate_birth_hypotheses,
    enumerate_survival,
)
from fisst_mht.core.belief import (
    NULL_MEASUREMENT,
    Belief,
    GaussianBelief,
    TrackLabel,
    marginal_likelihood,
    predict,
    update,
)
from fisst_mht.core.models import ScenarioModels, birth_pdf, log_association_prior, log_survival_prior
from fisst_mht.exceptions import ConfigError, ExplosionGuardError, NumericalError, RangeError

if TYPE_CHECKING:
    from fisst_mht.core.pruning import PruningPolicy

logger = logging.getLogger(__name__)

UNDERFLOW_MARGIN = 700.0


@dataclass(frozen=True, eq=False)
class Track:
    label: TrackLabel
    belief: Belief


@dataclass(frozen=True)
class Provenance:
    """Where a child came from: parent index, surviving slots, birth pixels, association."""

    parent: int
    survivors: Tuple[int, ...]
    births: Tuple[int, ...]
    assignments: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """n labelled tracks with a log-weight."""

    tracks: Tuple[Track, ...]
    log_weight: float = 0.0
    provenance: Optional[Provenance] = None

    def __post_init__(self) -> None:
        tracks = tuple(self.tracks)
        labels = [t.label for t in tracks]
        if len(set(labels)) != len(labels):
            raise RangeError("track labels within a hypothesis must be distinct")
        if math.isnan(self.log_weight) or self.log_weight == math.inf:
            raise NumericalError(f"invalid log-weight {self.log_weight}")
        object.__setattr__(self, "tracks", tracks)

    @property
    def n(self) -> int:
        return len(self.tracks)

    @property
    def labels(self) -> Tuple[TrackLabel, ...]:
        return tuple(t.label for t in self.tracks)

    @property
    def label_key(self) -> Tuple[TrackLabel, ...]:
        """Canonical (sorted) label set; hypotheses with equal keys are duplicates."""
        return tuple(sorted(self.labels))

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)

    def with_log_weight(self, log_weight: float) -> "Hypothesis":
        return replace(self, log_weight=log_weight)

    def permuted(self, order: Sequence[int]) -> "Hypothesis":
        """Same hypothesis with its tracks stored in a different order."""
        if sorted(order) != list(range(self.n)):
            raise RangeError(f"{order} is not a permutation of {self.n} tracks")
        return replace(self, tracks=tuple(self.tracks[i] for i in order))


@dataclass(frozen=True)
class StepStats:
    """Bookkeeping of one recursion step, reported in the per-scan trace."""

    scan_index: int
    descendants: int
    after_merge: int
    after_prune: int
    dropped_mass: float
    underflow_dropped: int = 0


@dataclass(frozen=True, eq=False)
class HypothesisForest:
    """The multi-target pdf as a weighted hypothesis collection."""

    hypotheses: Tuple[Hypothesis, ...]
    scan_index: int = 0
    stats: Optional[StepStats] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        if not self.hypotheses:
            raise RangeError("a forest needs at least one hypothesis")

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([h.log_weight for h in self.hypotheses], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def normalized(self) -> "HypothesisForest":
        total = float(logsumexp(self.log_weights))
        if not np.isfinite(total):
            raise NumericalError("forest has no hypothesis with positive weight")
        return replace(self, hypotheses=tuple(
            h.with_log_weight(h.log_weight - total) for h in self.hypotheses))

    def map_hypothesis(self) -> Hypothesis:
        """Highest-weight hypothesis (ties broken by label key)."""
        return min(self.hypotheses, key=lambda h: (-h.log_weight, h.label_key))


@dataclass(frozen=True)
class EngineSettings:
    """Enumeration controls of the recursion."""

    birth_policy: BirthPolicy = field(default_factory=BirthPolicy)
    gate_probability: Optional[float] = None
    max_descendants: int = 200_000
    survival_cap: int = 4096
    workers: int = 1
    homht_pd_factors: bool = False

    def __post_init__(self) -> None:
        if self.gate_probability is not None and not 0.0 < self.gate_probability < 1.0:
            raise ConfigError(f"gate_probability must lie in (0, 1), got {self.gate_probability}")
        if self.max_descendants < 1:
            raise ConfigError("max_descendants must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


def initial_forest(beliefs: Sequence[Belief]) -> HypothesisForest:
    """One hypothesis holding the initial targets, weight 1, at scan 0."""
    tracks = tuple(Track(TrackLabel.initial(k), b) for k, b in enumerate(beliefs))
    return HypothesisForest((Hypothesis(tracks, 0.0),), scan_index=0)


def predict_hypothesis(h: Hypothesis, b: BirthHypothesis, s: SurvivalHypothesis,
                       models: ScenarioModels, scan_index: int) -> Hypothesis:
    """Survival, Kalman prediction and birth for one (parent, birth, survival) triple."""
    if s.r != h.n:
        raise RangeError(f"survival hypothesis over {s.r} slots, hypothesis has {h.n} tracks")
    survivors = tuple(
        Track(h.tracks[i].label, predict(h.tracks[i].belief, models.motion)) for i in s.survivors
    )
    births = tuple(
        Track(TrackLabel.birth(scan_index, pixel),
              birth_pdf(pixel, models.birth, models.birth_pdf_mode, models.measurement))
        for pixel in b.pixels
    )
    log_weight = (h.log_weight
                  + models.log_birth_prior(b.p)
                  + log_survival_prior(s.p, s.r, models.survival))
    return Hypothesis(survivors + births, log_weight)


UpdateCache = Dict[Tuple[int, int], Tuple[Belief, float]]


def _updated(h_pred: Hypothesis, i: int, j: int, z: np.ndarray, models: ScenarioModels,
             cache: Optional[UpdateCache]) -> Tuple[Belief, float]:
    if cache is not None and (i, j) in cache:
        return cache[(i, j)]
    result = update(h_pred.tracks[i].belief, z, models.measurement)
    if cache is not None:
        cache[(i, j)] = result
    return result


def update_hypothesis(h_pred: Hypothesis, a: DataAssociation, Z: np.ndarray,
                      models: ScenarioModels, scan_index: int,
                      cache: Optional[UpdateCache] = None) -> Hypothesis:
    """Measurement update of one predicted hypothesis under one data association.

    The returned log-weight is unnormalized: parent + log p(a | n)
    + log(k! / V^k) + the detected tracks' log marginal likelihoods.
    """
    if a.n != h_pred.n:
        raise RangeError(f"association over {a.n} targets, hypothesis has {h_pred.n}")
    Z = _scan_measurements(Z, models)
    if a.m != len(Z):
        raise RangeError(f"association over {a.m} measurements, scan has {len(Z)}")
    log_weight = (h_pred.log_weight
                  + log_association_prior(h_pred.n, a.m, a.k, models.measurement, models.clutter)
                  + float(gammaln(a.k + 1)) - a.k * math.log(models.clutter.V))
    tracks: List[Track] = []
    for i, (track, j) in enumerate(zip(h_pred.tracks, a.assignments)):
        if j == NULL_MEASUREMENT:
            tracks.append(Track(track.label.extend(scan_index, j), track.belief))
            continue
        posterior, log_likelihood = _updated(h_pred, i, j, Z[j], models, cache)
        log_weight += log_likelihood
        tracks.append(Track(track.label.extend(scan_index, j), posterior))
    return Hypothesis(tuple(tracks), log_weight)


def homht_child_weight(parent_log_weight: float, detected_track_likelihoods: Sequence[float],
                       n: int, m: int, k: int, n_births: int, models: ScenarioModels,
                       pd_factors: bool = False) -> float:
    """Reid's HOMHT child log-weight, unnormalized.

    (1-p_D)^(n-(m-k)) p_D^(m-k) prod(likelihoods) (lambda_B/p_D)^n_births lambda_C^k
    times the parent weight. With ``pd_factors`` the birth factor is lambda_B^n_births.
    """
    p_D = models.measurement.p_D
    detected = m - k
    if detected > n or n_births > detected:
        raise RangeError(f"inconsistent counts n={n}, m={m}, k={k}, births={n_births}")
    lambda_B = float(models.birth.lambda_B or 0.0)
    birth_factor = xlogy(n_births, lambda_B)
    if not pd_factors:
        birth_factor -= xlogy(n_births, p_D)
    return float(parent_log_weight
                 + xlogy(n - detected, 1.0 - p_D)
                 + xlogy(detected, p_D)
                 + math.fsum(detected_track_likelihoods)
                 + birth_factor
                 + xlogy(k, models.clutter.lambda_C))


def fisst_closed_form_weight(parent_log_weight: float, detected_track_likelihoods: Sequence[float],
                             n: int, r: int, m: int, k: int, s: int, models: ScenarioModels,
                             births_supported: bool = True) -> float:
    """FISST child log-weight under full-state, pixel-confined measurement likelihoods.

    (1-p_D)^(n-(m-k)) p_D^(m-k) prod(existing-target likelihoods)
    lambda_B^(n-r) V_bar^((n-r)-s) lambda_C^k times the parent weight, where s of
    the n-r births are detected. Zero (-inf) when a detected birth's measurement
    falls outside its hypothesized pixel.
    """
    if not births_supported:
        return -math.inf
    if not 0 <= s <= n - r:
        raise RangeError(f"detected births s={s} outside [0, {n - r}]")
    p_D = models.measurement.p_D
    detected = m - k
    lambda_B = float(models.birth.lambda_B or 0.0)
    return float(parent_log_weight
                 + xlogy(n - detected, 1.0 - p_D)
                 + xlogy(detected, p_D)
                 + math.fsum(detected_track_likelihoods)
                 + xlogy(n - r, lambda_B)
                 + ((n - r) - s) * math.log(models.birth.V_bar)
                 + xlogy(k, models.clutter.lambda_C))


def cardinality_distribution(forest: HypothesisForest) -> Dict[int, float]:
    """rho(n): total weight of the n-track hypotheses."""
    rho: Dict[int, float] = {}
    for h in forest.hypotheses:
        rho[h.n] = rho.get(h.n, 0.0) + h.weight
    return dict(sorted(rho.items()))


def _scan_measurements(Z: np.ndarray, models: ScenarioModels) -> np.ndarray:
    if len(Z) == 0:
        return np.zeros((0, models.measurement.dim))
    return np.atleast_2d(np.asarray(Z, dtype=float))


def _gate_for(h_pred: Hypothesis, Z: np.ndarray, models: ScenarioModels,
              settings: EngineSettings) -> Optional[Gate]:
    if settings.gate_probability is None or len(Z) == 0:
        return None
    return ellipsoidal_gate([t.belief for t in h_pred.tracks], Z, models.measurement,
                            settings.gate_probability)


def _expand_parent(parent_index: int, parent: Hypothesis, Z: np.ndarray,
                   birth_hypotheses: Sequence[BirthHypothesis], models: ScenarioModels,
                   settings: EngineSettings, scan_index: int) -> List[Hypothesis]:
    children: List[Hypothesis] = []
    for s in enumerate_survival(parent.n, settings.survival_cap):
        if not np.isfinite(log_survival_prior(s.p, s.r, models.survival)):
            continue
        for b in birth_hypotheses:
            h_pred = predict_hypothesis(parent, b, s, models, scan_index)
            if not np.isfinite(h_pred.log_weight):
                continue
            gate = _gate_for(h_pred, Z, models, settings)
            cache: UpdateCache = {}
            for a in enumerate_associations(h_pred.n, len(Z), gate):
                child = update_hypothesis(h_pred, a, Z, models, scan_index, cache)
                if not np.isfinite(child.log_weight):
                    continue
                children.append(replace(child, provenance=Provenance(
                    parent_index, s.survivors, b.pixels, a.assignments)))
                if len(children) > settings.max_descendants:
                    raise ExplosionGuardError(
                        f"more than {settings.max_descendants} descendants", scan_index)
    logger.debug("parent %d expanded into %d children", parent_index, len(children))
    return children


def _homht_expand_parent(parent_index: int, parent: Hypothesis, Z: np.ndarray,
                         models: ScenarioModels, settings: EngineSettings,
                         scan_index: int) -> List[Hypothesis]:
    """Reid-style expansion: every unassigned measurement is clutter or a new target."""
    children: List[Hypothesis] = []
    m = len(Z)
    max_births = 0 if settings.birth_policy.kind == "none" else settings.birth_policy.max_p
    # a measurement inside the field of view may start a track from its pixel
    pixels = [models.birth.pixel_of(z) for z in Z]
    seeded: Dict[int, Track] = {}
    for j, pixel in enumerate(pixels):
        if pixel is None:
            continue
        prior = birth_pdf(pixel, models.birth, models.birth_pdf_mode, models.measurement)
        posterior, _ = update(prior, Z[j], models.measurement)
        seeded[j] = Track(TrackLabel.birth(scan_index, pixel).extend(scan_index, j), posterior)
    for s in enumerate_survival(parent.n, settings.survival_cap):
        log_prior = log_survival_prior(s.p, s.r, models.survival)
        if not np.isfinite(log_prior):
            continue
        h_pred = predict_hypothesis(parent, BirthHypothesis(), s, models, scan_index)
        # no FISST birth prior here; Reid weights carry births through lambda_B
        h_pred = h_pred.with_log_weight(parent.log_weight + log_prior)
        gate = _gate_for(h_pred, Z, models, settings)
        cache: UpdateCache = {}
        for a in enumerate_associations(h_pred.n, m, gate):
            tracks: List[Track] = []
            likelihoods: List[float] = []
            for i, (track, j) in enumerate(zip(h_pred.tracks, a.assignments)):
                if j == NULL_MEASUREMENT:
                    tracks.append(Track(track.label.extend(scan_index, j), track.belief))
                    continue
                posterior, log_likelihood = _updated(h_pred, i, j, Z[j], models, cache)
                likelihoods.append(log_likelihood)
                tracks.append(Track(track.label.extend(scan_index, j), posterior))
            # each subset of the unassigned measurements, up to max_births, becomes new targets
            free = [j for j in a.clutter if j in seeded]
            for size in range(min(len(free), max_births) + 1):
                for born in itertools.combinations(free, size):
                    n = h_pred.n + size
                    k = m - a.detected - size
                    log_weight = homht_child_weight(
                        h_pred.log_weight, likelihoods, n, m, k, size, models,
                        settings.homht_pd_factors)
                    if not np.isfinite(log_weight):
                        continue
                    new_tracks = tuple(tracks) + tuple(seeded[j] for j in born)
                    children.append(Hypothesis(new_tracks, log_weight, Provenance(
                        parent_index, s.survivors, tuple(seeded[j].label.origin[2] for j in born),
                        a.assignments + tuple(born))))
                    if len(children) > settings.max_descendants:
                        raise ExplosionGuardError(
                            f"more than {settings.max_descendants} descendants", scan_index)
    return children


def merge_duplicates(children: Sequence[Hypothesis]) -> List[Hypothesis]:
    """Sum the weights of hypotheses sharing a track-label set; first occurrence is kept."""
    groups: Dict[Tuple[TrackLabel, ...], List[Hypothesis]] = {}
    for child in children:
        groups.setdefault(child.label_key, []).append(child)
    merged = []
    for members in groups.values():
        if len(members) == 1:
            merged.append(members[0])
        else:
            total = float(logsumexp([h.log_weight for h in members]))
            merged.append(members[0].with_log_weight(total))
    return merged


def normalize_children(children: Sequence[Hypothesis]) -> Tuple[List[Hypothesis], int]:
    """Log-normalize, dropping children more than UNDERFLOW_MARGIN below the best."""
    if not children:
        raise NumericalError("every descendant hypothesis has zero weight")
    log_weights = np.array([h.log_weight for h in children])
    floor = float(log_weights.max()) - UNDERFLOW_MARGIN
    kept = [h for h in children if h.log_weight >= floor]
    total = float(logsumexp([h.log_weight for h in kept]))
    return [h.with_log_weight(h.log_weight - total) for h in kept], len(children) - len(kept)


def _finalize(children: List[Hypothesis], policy: "PruningPolicy",
              scan_index: int) -> HypothesisForest:
    from fisst_mht.core.pruning import prune, pruning_error_bound

    descendants = len(children)
    normalized, underflow = normalize_children(children)
    merged = merge_duplicates(normalized)
    pre_prune = HypothesisForest(tuple(merged), scan_index).normalized()
    dropped = pruning_error_bound(pre_prune, policy)
    pruned = prune(pre_prune, policy)
    stats = StepStats(scan_index, descendants, len(pre_prune), len(pruned), dropped, underflow)
    logger.info("scan %d: %d descendants, %d after merge, %d after prune, dropped mass %.3g",
                scan_index, descendants, len(pre_prune), len(pruned), dropped)
    return replace(pruned, stats=stats)


Expander = Callable[[int, Hypothesis], List[Hypothesis]]


def _expand_all(forest: HypothesisForest, expand: Expander, settings: EngineSettings
                ) -> List[Hypothesis]:
    indexed = list(enumerate(forest.hypotheses))
    if settings.workers > 1 and len(indexed) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            batches = list(pool.map(lambda item: expand(*item), indexed))
    else:
        batches = [expand(i, h) for i, h in indexed]
    children = [child for batch in batches for child in batch]
    if len(children) > settings.max_descendants:
        raise ExplosionGuardError(f"{len(children)} descendants exceed cap {settings.max_descendants}",
                                  forest.scan_index + 1)
    return children


def expand_forest(forest: HypothesisForest, Z: np.ndarray, models: ScenarioModels,
                  settings: EngineSettings = EngineSettings()) -> List[Hypothesis]:
    """All unnormalized FISST descendants of a forest, each with its provenance."""
    scan_index = forest.scan_index + 1
    Z = _scan_measurements(Z, models)
    birth_hypotheses = enumerate_birth_hypotheses(models.birth, Z, settings.birth_policy)

    def expand(i: int, h: Hypothesis) -> List[Hypothesis]:
        return _expand_parent(i, h, Z, birth_hypotheses, models, settings, scan_index)

    return _expand_all(forest, expand, settings)


def fisst_step(forest: HypothesisForest, Z: np.ndarray, models: ScenarioModels,
               pruning: "PruningPolicy", settings: EngineSettings = EngineSettings()
               ) -> HypothesisForest:
    """One full FISST recursion: expand, normalize, merge, prune, renormalize."""
    children = expand_forest(forest, Z, models, settings)
    return _finalize(children, pruning, forest.scan_index + 1)


def homht_step(forest: HypothesisForest, Z: np.ndarray, models: ScenarioModels,
               pruning: "PruningPolicy", settings: EngineSettings = EngineSettings()
               ) -> HypothesisForest:
    """One HOMHT recursion with Reid's weights; births are seeded from measurements."""
    scan_index = forest.scan_index + 1
    Z = _scan_measurements(Z, models)

    def expand(i: int, h: Hypothesis) -> List[Hypothesis]:
        return _homht_expand_parent(i, h, Z, models, settings, scan_index)

    return _finalize(_expand_all(forest, expand, settings), pruning, scan_index)


def track_estimates(h: Hypothesis) -> List[Tuple[TrackLabel, GaussianBelief]]:
    """(label, Gaussian belief) per track of a hypothesis."""
    return [(t.label, t.belief.to_gaussian()) for t in h.tracks]


def detected_likelihoods(h_pred: Hypothesis, a: DataAssociation, Z: np.ndarray,
                         models: ScenarioModels, tracks: Optional[Sequence[int]] = None
                         ) -> List[float]:
    """Log marginal likelihoods of the detected tracks (optionally a subset of slots)."""
    slots = range(h_pred.n) if tracks is None else tracks
    return [
        marginal_likelihood(h_pred.tracks[i].belief, Z[a.assignments[i]], models.measurement)
        for i in slots if a.assignments[i] != NULL_MEASUREMENT
    ]
