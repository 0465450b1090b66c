"""Scenario simulation, tracker execution and scoring.

Ground truth and measurements are drawn from a ``numpy`` PCG64 generator seeded
from the scenario, so a (scenario, seed, mode, policy) tuple reproduces the same
records bit for bit. The tracker only ever sees :class:`MeasurementScan` values;
origin tags stay in :class:`LabelledScan` and are attached to the records after
tracking, for scoring.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from fisst_mht.core.belief import GaussianBelief
from fisst_mht.core.hypothesis import (
    EngineSettings,
    HypothesisForest,
    StepStats,
    cardinality_distribution,
    fisst_step,
    homht_step,
    initial_forest,
    track_estimates,
)
from fisst_mht.core.matchers import assignment_rmse, cardinality_error, map_cardinality
from fisst_mht.core.models import ScenarioModels
from fisst_mht.core.pruning import PruningPolicy
from fisst_mht.exceptions import ConfigError, DimensionError

logger = logging.getLogger(__name__)

TrackerMode = Literal["fisst", "homht", "fisst_all_births_detected"]
TRACKER_MODES: Tuple[str, ...] = ("fisst", "homht", "fisst_all_births_detected")

CLUTTER_ORIGIN = -1
"""Origin tag of a clutter measurement."""


@dataclass(frozen=True, eq=False)
class Scenario:
    models: ScenarioModels
    horizon: int
    initial_targets: Tuple[GaussianBelief, ...] = ()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        targets = tuple(self.initial_targets)
        object.__setattr__(self, "initial_targets", targets)
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        for target in targets:
            if target.dim != self.models.motion.dim:
                raise DimensionError(
                    f"initial target of dimension {target.dim}, state dimension is {self.models.motion.dim}")
        params = [t.parameters() for t in targets]
        for i in range(len(params)):
            for j in range(i + 1, len(params)):
                if np.allclose(params[i], params[j]):
                    raise ConfigError(f"initial targets {i} and {j} are indistinguishable")


def scenario_rng(scenario: Scenario) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(scenario.rng_seed))


@dataclass(frozen=True, eq=False)
class TruthTarget:
    identity: int
    state: np.ndarray


@dataclass(frozen=True, eq=False)
class TruthScan:
    scan_index: int
    targets: Tuple[TruthTarget, ...]

    @property
    def n(self) -> int:
        return len(self.targets)

    def states(self, dim: int) -> np.ndarray:
        if not self.targets:
            return np.zeros((0, dim))
        return np.stack([t.state for t in self.targets])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scan": self.scan_index,
            "targets": [{"id": t.identity, "state": t.state.tolist()} for t in self.targets],
        }


@dataclass(frozen=True, eq=False)
class MeasurementScan:
    """The measurement values of one scan; everything the tracker is allowed to see."""

    scan_index: int
    measurements: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"scan": self.scan_index, "measurements": self.measurements.tolist()}


@dataclass(frozen=True, eq=False)
class LabelledScan:
    """Measurements plus the identity of the target (or CLUTTER_ORIGIN) behind each one."""

    scan: MeasurementScan
    origins: Tuple[int, ...]

    @property
    def measurements(self) -> np.ndarray:
        return self.scan.measurements

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.scan.to_dict(), origins=list(self.origins))


def _gaussian_draw(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    # eigh tolerates singular covariances (Q = 0, R = 0)
    return rng.multivariate_normal(mean, cov, method="eigh")


def _spawn(pixel: int, models: ScenarioModels, rng: np.random.Generator) -> np.ndarray:
    birth = models.birth
    meas = models.measurement
    lower, upper = birth.pixel_bounds(pixel)
    z = lower + rng.random(lower.size) * (upper - lower)
    if meas.is_full_state:
        return z
    lift = np.linalg.pinv(meas.H)
    null_projector = np.eye(meas.state_dim) - lift @ meas.H
    noise = math.sqrt(birth.unobserved_variance) * rng.standard_normal(meas.state_dim)
    return lift @ z + null_projector @ noise


def generate_truth(scenario: Scenario, rng: Optional[np.random.Generator] = None) -> List[TruthScan]:
    """True multi-target states for scans 1..horizon.

    Scan-0 states are drawn from the initial target beliefs. Each scan every
    target survives with probability beta and moves by x' = F x + G w; each pixel
    then spawns a target with probability alpha, placed uniformly in the pixel.
    """
    rng = scenario_rng(scenario) if rng is None else rng
    models = scenario.models
    motion = models.motion
    zero = np.zeros(motion.Q.shape[0])
    targets = [TruthTarget(k, _gaussian_draw(rng, b.mean, b.cov))
               for k, b in enumerate(scenario.initial_targets)]
    next_identity = len(targets)
    scans = []
    for scan_index in range(1, scenario.horizon + 1):
        alive = rng.random(len(targets)) < models.survival.beta
        targets = [
            TruthTarget(t.identity, motion.F @ t.state + motion.G @ _gaussian_draw(rng, zero, motion.Q))
            for t, keep in zip(targets, alive) if keep
        ]
        born = np.flatnonzero(rng.random(models.birth.M) < models.birth.alpha)
        for pixel in born:
            targets.append(TruthTarget(next_identity, _spawn(int(pixel), models, rng)))
            next_identity += 1
        scans.append(TruthScan(scan_index, tuple(targets)))
        logger.debug("truth scan %d: %d targets, %d born", scan_index, len(targets), born.size)
    return scans


def generate_measurements(truth: Sequence[TruthScan], models: ScenarioModels,
                          rng: np.random.Generator) -> List[LabelledScan]:
    """Detections (probability p_D, z = H x + v) and Poisson clutter, shuffled per scan."""
    meas = models.measurement
    birth = models.birth
    zero = np.zeros(meas.dim)
    scans = []
    for truth_scan in truth:
        values: List[np.ndarray] = []
        origins: List[int] = []
        for target in truth_scan.targets:
            if rng.random() < meas.p_D:
                values.append(meas.H @ target.state + _gaussian_draw(rng, zero, meas.R))
                origins.append(target.identity)
        clutter_count = int(rng.poisson(models.clutter.expected_count))
        for _ in range(clutter_count):
            values.append(birth.fov_lower + rng.random(meas.dim) * (birth.fov_upper - birth.fov_lower))
            origins.append(CLUTTER_ORIGIN)
        order = rng.permutation(len(values))
        Z = np.stack([values[i] for i in order]) if values else np.zeros((0, meas.dim))
        scans.append(LabelledScan(MeasurementScan(truth_scan.scan_index, Z),
                                  tuple(origins[i] for i in order)))
    return scans


@dataclass(frozen=True)
class HypothesisSummary:
    rank: int
    weight: float
    n: int
    labels: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"rank": self.rank, "weight": self.weight, "n": self.n, "labels": list(self.labels)}


@dataclass(frozen=True, eq=False)
class TrackEstimate:
    label: str
    mean: np.ndarray
    cov: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class ScanRecord:
    """Tracker output of one scan; ``truth`` and ``origins`` are filled in by :func:`run` only."""

    scan_index: int
    measurements: np.ndarray
    top_hypotheses: Tuple[HypothesisSummary, ...]
    cardinality: Dict[int, float]
    map_estimates: Tuple[TrackEstimate, ...]
    stats: Optional[StepStats] = None
    truth: Optional[TruthScan] = None
    origins: Optional[Tuple[int, ...]] = None

    def to_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "scan": self.scan_index,
            "measurements": self.measurements.tolist(),
            "hypotheses": [h.to_dict() for h in self.top_hypotheses],
            "cardinality": {str(n): w for n, w in self.cardinality.items()},
            "map_estimates": [e.to_dict() for e in self.map_estimates],
        }
        if self.stats is not None:
            record["stats"] = {
                "descendants": self.stats.descendants,
                "after_merge": self.stats.after_merge,
                "after_prune": self.stats.after_prune,
                "dropped_mass": self.stats.dropped_mass,
                "underflow_dropped": self.stats.underflow_dropped,
            }
        return record


@dataclass(frozen=True)
class RunSettings:
    """Tracker mode plus the pruning and enumeration controls of a run."""

    mode: TrackerMode = "fisst"
    pruning: PruningPolicy = field(default_factory=PruningPolicy)
    engine: EngineSettings = field(default_factory=EngineSettings)
    top_hypotheses: int = 10

    def __post_init__(self) -> None:
        if self.mode not in TRACKER_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {', '.join(TRACKER_MODES)}")
        if self.top_hypotheses < 1:
            raise ConfigError("top_hypotheses must be at least 1")


def effective_policy(mode: TrackerMode, policy: PruningPolicy) -> PruningPolicy:
    if mode == "fisst_all_births_detected":
        return replace(policy, drop_undetected_births=True)
    return policy


def _record(forest: HypothesisForest, scan: MeasurementScan, top: int) -> ScanRecord:
    ranked = sorted(forest.hypotheses, key=lambda h: (-h.log_weight, h.label_key))
    summaries = tuple(
        HypothesisSummary(rank, h.weight, h.n, tuple(str(label) for label in h.labels))
        for rank, h in enumerate(ranked[:top])
    )
    estimates = tuple(
        TrackEstimate(str(label), belief.mean, belief.cov)
        for label, belief in track_estimates(forest.map_hypothesis())
    )
    return ScanRecord(scan.scan_index, scan.measurements, summaries,
                      cardinality_distribution(forest), estimates, forest.stats)


def track(scans: Sequence[MeasurementScan], models: ScenarioModels,
          initial_targets: Sequence[GaussianBelief], mode: TrackerMode = "fisst",
          policy: PruningPolicy = PruningPolicy(), engine: EngineSettings = EngineSettings(),
          top_hypotheses: int = 10) -> List[ScanRecord]:
    """Run the tracker over measurement values only, one record per scan."""
    RunSettings(mode, policy, engine, top_hypotheses)
    step = homht_step if mode == "homht" else fisst_step
    policy = effective_policy(mode, policy)
    forest = initial_forest(initial_targets)
    records = []
    for scan in scans:
        if scan.scan_index != forest.scan_index + 1:
            raise ConfigError(f"expected scan {forest.scan_index + 1}, got {scan.scan_index}")
        forest = step(forest, scan.measurements, models, policy, engine)
        records.append(_record(forest, scan, top_hypotheses))
    return records


def run(scenario: Scenario, mode: TrackerMode = "fisst", policy: PruningPolicy = PruningPolicy(),
        engine: EngineSettings = EngineSettings(), top_hypotheses: int = 10) -> List[ScanRecord]:
    """Simulate the scenario, track it, and attach the hidden truth to each record."""
    rng = scenario_rng(scenario)
    truth = generate_truth(scenario, rng)
    labelled = generate_measurements(truth, scenario.models, rng)
    records = track([s.scan for s in labelled], scenario.models, scenario.initial_targets,
                    mode, policy, engine, top_hypotheses)
    return [replace(r, truth=t, origins=s.origins) for r, t, s in zip(records, truth, labelled)]


@dataclass(frozen=True)
class ScanMetrics:
    scan_index: int
    true_n: int
    cardinality_error: int
    map_hypothesis_error: int
    rmse: Optional[float]
    dropped_mass: float


@dataclass(frozen=True)
class RunMetrics:
    scans: Tuple[ScanMetrics, ...]

    @property
    def mean_cardinality_error(self) -> float:
        return float(np.mean([s.cardinality_error for s in self.scans])) if self.scans else 0.0

    @property
    def mean_map_hypothesis_error(self) -> float:
        return float(np.mean([s.map_hypothesis_error for s in self.scans])) if self.scans else 0.0

    @property
    def map_cardinality_accuracy(self) -> float:
        """Fraction of scans whose MAP hypothesis has the true cardinality."""
        if not self.scans:
            return 1.0
        return float(np.mean([s.map_hypothesis_error == 0 for s in self.scans]))

    @property
    def rmse(self) -> Optional[float]:
        values = [s.rmse for s in self.scans if s.rmse is not None]
        return float(np.sqrt(np.mean(np.square(values)))) if values else None

    @property
    def mean_dropped_mass(self) -> float:
        return float(np.mean([s.dropped_mass for s in self.scans])) if self.scans else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_cardinality_error": self.mean_cardinality_error,
            "mean_map_hypothesis_error": self.mean_map_hypothesis_error,
            "map_cardinality_accuracy": self.map_cardinality_accuracy,
            "rmse": self.rmse,
            "mean_dropped_mass": self.mean_dropped_mass,
            "scans": [
                {"scan": s.scan_index, "true_n": s.true_n, "cardinality_error": s.cardinality_error,
                 "map_hypothesis_error": s.map_hypothesis_error, "rmse": s.rmse,
                 "dropped_mass": s.dropped_mass}
                for s in self.scans
            ],
        }


def score(records: Sequence[ScanRecord], models: ScenarioModels) -> RunMetrics:
    """Cardinality errors, MAP-track RMSE in measurement space and pruned mass per scan."""
    H = models.measurement.H
    metrics = []
    for record in records:
        if record.truth is None:
            raise ConfigError(f"scan {record.scan_index} carries no truth; score needs run() output")
        true_n = record.truth.n
        map_n = len(record.map_estimates)
        estimates = (np.stack([e.mean for e in record.map_estimates]) if record.map_estimates
                     else np.zeros((0, H.shape[1])))
        truth = record.truth.states(H.shape[1])
        metrics.append(ScanMetrics(
            record.scan_index,
            true_n,
            cardinality_error(map_cardinality(record.cardinality), true_n),
            cardinality_error(map_n, true_n),
            assignment_rmse(estimates @ H.T, truth @ H.T),
            record.stats.dropped_mass if record.stats is not None else 0.0,
        ))
    return RunMetrics(tuple(metrics))
