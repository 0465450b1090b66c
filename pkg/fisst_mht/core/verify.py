"""Desk-scale verification suite behind ``fisst-mht verify``.

Each check builds a small deterministic scenario, runs the fast engine next to
an independent computation (grid oracle, closed-form weight, HOMHT recursion,
analytic ratio) and reports the worst discrepancy it saw.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fisst_mht.core.association import BirthHypothesis, BirthPolicy, DataAssociation, SurvivalHypothesis
from fisst_mht.core.belief import NULL_MEASUREMENT, GaussianBelief, TrackLabel
from fisst_mht.core.hypothesis import (
    EngineSettings,
    HypothesisForest,
    detected_likelihoods,
    expand_forest,
    fisst_closed_form_weight,
    fisst_step,
    homht_child_weight,
    homht_step,
    initial_forest,
    merge_duplicates,
    normalize_children,
    predict_hypothesis,
)
from fisst_mht.core.models import (
    BirthModel,
    BirthPdfMode,
    BirthPriorMode,
    ClutterModel,
    MeasurementModel,
    MotionModel,
    ScenarioModels,
    SurvivalModel,
    birth_prior,
    birth_prior_poisson_limit,
)
from fisst_mht.core.oracle import (
    StateGrid,
    grid_forest_from,
    oracle_step,
    track_uniqueness_experiment,
    transition_matrix,
)
from fisst_mht.core.pruning import (
    PruningPolicy,
    grandchild_pair,
    has_undetected_birth,
    prune,
    undetected_birth_pair,
    undetected_birth_ratio,
)
from fisst_mht.core.sim import Scenario, generate_measurements, generate_truth, scenario_rng
from fisst_mht.exceptions import FisstError

logger = logging.getLogger(__name__)

UNPRUNED = PruningPolicy(max_hypotheses=1_000_000)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str


def line_models(p_D: float = 0.8, lambda_C: float = 0.05, beta: float = 1.0,
                alpha: float = 0.0, pixels: int = 2, q: float = 0.09, r: float = 0.25,
                length: float = 10.0, birth_pdf_mode: BirthPdfMode = "gaussian",
                birth_prior_mode: BirthPriorMode = "binomial") -> ScenarioModels:
    """One-dimensional random walk observed directly on [0, length]."""
    return ScenarioModels(
        motion=MotionModel([[1.0]], [[1.0]], [[q]]),
        measurement=MeasurementModel([[1.0]], [[r]], p_D),
        clutter=ClutterModel(lambda_C, length),
        birth=BirthModel([0.0], [length], (pixels,), alpha),
        survival=SurvivalModel(beta),
        birth_pdf_mode=birth_pdf_mode,
        birth_prior_mode=birth_prior_mode,
    )


def plane_models(p_D: float = 0.95, lambda_C: float = 0.005, beta: float = 0.98,
                 alpha: float = 0.01, shape: Tuple[int, int] = (5, 5), q: float = 0.01,
                 r: float = 0.01, birth_pdf_mode: BirthPdfMode = "gaussian",
                 birth_prior_mode: BirthPriorMode = "binomial") -> ScenarioModels:
    """Two-dimensional random walk observed directly on [0, 10]^2."""
    eye = np.eye(2)
    return ScenarioModels(
        motion=MotionModel(eye, eye, q * eye),
        measurement=MeasurementModel(eye, r * eye, p_D),
        clutter=ClutterModel(lambda_C, 100.0),
        birth=BirthModel([0.0, 0.0], [10.0, 10.0], shape, alpha),
        survival=SurvivalModel(beta),
        birth_pdf_mode=birth_pdf_mode,
        birth_prior_mode=birth_prior_mode,
    )


def weight_discrepancy(engine: HypothesisForest, oracle_weights: Dict[Tuple[TrackLabel, ...], float],
                       floor: float = 1e-10) -> float:
    """Largest relative weight difference over label sets carrying at least ``floor`` mass."""
    engine_weights = {h.label_key: h.weight for h in engine.normalized().hypotheses}
    worst = 0.0
    for key in set(engine_weights) | set(oracle_weights):
        a = engine_weights.get(key, 0.0)
        b = oracle_weights.get(key, 0.0)
        scale = max(a, b)
        if scale >= floor:
            worst = max(worst, abs(a - b) / scale)
    return worst


ORACLE_MARGIN = 5.0
"""Grid overhang beyond the field of view so Gaussian tails stay on the grid."""


def _oracle_weights(models: ScenarioModels, engine: HypothesisForest, scans: Sequence[np.ndarray],
                    policy: BirthPolicy, cells: int) -> List[Dict[Tuple[TrackLabel, ...], float]]:
    grid = StateGrid(models.birth.fov_lower - ORACLE_MARGIN, models.birth.fov_upper + ORACLE_MARGIN,
                     (cells,))
    kernel = transition_matrix(grid, models)
    oracle = grid_forest_from(engine, grid)
    weights = []
    for Z in scans:
        oracle = oracle_step(oracle, Z, models, policy, kernel)
        weights.append(oracle.weights_by_labels())
    return weights


def _extrapolated(coarse: Dict[Tuple[TrackLabel, ...], float],
                  fine: Dict[Tuple[TrackLabel, ...], float]) -> Dict[Tuple[TrackLabel, ...], float]:
    """Richardson step for a midpoint rule whose error is c h^2 + O(h^4)."""
    return {key: (4.0 * fine.get(key, 0.0) - coarse.get(key, 0.0)) / 3.0 for key in set(coarse) | set(fine)}


def _oracle_comparison(models: ScenarioModels, targets: Sequence[GaussianBelief],
                       scans: Sequence[np.ndarray], policy: BirthPolicy, cells: int,
                       extrapolate: bool = False) -> float:
    """Worst per-scan weight discrepancy between the engine and the grid oracle.

    With ``extrapolate`` the oracle runs at ``cells`` and ``2 * cells`` and the
    two weight sets are combined by one Richardson step, which removes the
    leading error of boxes integrated against smooth likelihoods.
    """
    start = initial_forest(targets)
    oracle = _oracle_weights(models, start, scans, policy, cells)
    if extrapolate:
        fine = _oracle_weights(models, start, scans, policy, 2 * cells)
        oracle = [_extrapolated(c, f) for c, f in zip(oracle, fine)]
    settings = EngineSettings(birth_policy=policy)
    engine = start
    worst = 0.0
    for Z, expected in zip(scans, oracle):
        engine = fisst_step(engine, Z, models, UNPRUNED, settings)
        worst = max(worst, weight_discrepancy(engine, expected))
    return worst


def _oracle_cases() -> List[Tuple[str, Callable[[], float]]]:
    line = [GaussianBelief([3.0], [[0.25]]), GaussianBelief([7.0], [[0.16]])]
    three = [GaussianBelief([2.0], [[0.2]]), GaussianBelief([5.0], [[0.3]]), GaussianBelief([8.0], [[0.2]])]
    return [
        ("three targets", lambda: _oracle_comparison(
            line_models(beta=0.95), three, [np.array([[2.2], [5.3], [7.7]])], BirthPolicy("none"), 120)),
        ("two scans", lambda: _oracle_comparison(
            line_models(beta=0.95), line,
            [np.array([[3.2], [6.7], [8.9]]), np.array([[3.1], [7.3]])], BirthPolicy("none"), 120)),
        ("gaussian births", lambda: _oracle_comparison(
            line_models(alpha=0.05, pixels=4), line[:1],
            [np.array([[2.9], [7.4]]), np.array([[3.1]])], BirthPolicy("all_pixels", 1), 120)),
        ("uniform births", lambda: _oracle_comparison(
            line_models(beta=0.9, alpha=0.1, birth_pdf_mode="uniform", birth_prior_mode="poisson"),
            line[:1], [np.array([[2.9], [7.4]])], BirthPolicy("all_pixels", 1), 800, extrapolate=True)),
    ]


def check_oracle_equivalence(rtol: float = 1e-4) -> CheckResult:
    """Engine weights against brute-force set integration on a grid.

    Cases cover up to three targets, three measurements, four birth pixels and
    two scans.
    """
    errors = {name: case() for name, case in _oracle_cases()}
    worst = max(errors.values())
    summary = ", ".join(f"{name} {error:.2e}" for name, error in errors.items())
    return CheckResult("oracle_equivalence", worst <= rtol, worst,
                       f"max relative weight error {worst:.2e} ({summary}), tolerance {rtol:g}")


def check_normalization(scenarios: int = 100, scans: int = 30, max_measurements: int = 5,
                        atol: float = 1e-9) -> CheckResult:
    """Hypothesis weights sum to one after every scan of random pruned runs."""
    policy = PruningPolicy(max_hypotheses=10, min_weight=1e-8)
    settings = EngineSettings(birth_policy=BirthPolicy("none"), gate_probability=0.99)
    worst = 0.0
    for seed in range(scenarios):
        placement = np.random.Generator(np.random.PCG64(seed))
        models = plane_models(p_D=float(placement.uniform(0.7, 0.99)), lambda_C=0.02, beta=1.0, alpha=0.0)
        n = int(placement.integers(1, 5))
        targets = tuple(GaussianBelief(placement.uniform(2.0, 8.0, 2), 0.05 * np.eye(2)) for _ in range(n))
        scenario = Scenario(models, scans, targets, seed)
        rng = scenario_rng(scenario)
        forest = initial_forest(targets)
        for scan in generate_measurements(generate_truth(scenario, rng), models, rng):
            forest = fisst_step(forest, scan.measurements[:max_measurements], models, policy, settings)
            worst = max(worst, abs(math.fsum(forest.weights) - 1.0))
    return CheckResult("normalization", worst <= atol, worst,
                       f"max |sum of weights - 1| {worst:.2e} over {scenarios} runs of {scans} scans")


def check_fisst_homht_equivalence(seeds: int = 20, scans: int = 3, atol: float = 1e-10) -> CheckResult:
    """Fixed-cardinality scenarios: FISST and HOMHT give the same normalized weights."""
    worst = 0.0
    settings = EngineSettings(birth_policy=BirthPolicy("none"))
    policy = UNPRUNED
    models = plane_models(p_D=0.9, lambda_C=0.01, beta=1.0, alpha=0.0)
    for seed in range(seeds):
        placement = np.random.Generator(np.random.PCG64(seed))
        targets = tuple(GaussianBelief(placement.uniform(2.0, 8.0, 2), 0.05 * np.eye(2)) for _ in range(2))
        scenario = Scenario(models, scans, targets, seed)
        rng = scenario_rng(scenario)
        measured = generate_measurements(generate_truth(scenario, rng), models, rng)
        fisst = homht = initial_forest(targets)
        for scan in measured:
            fisst = fisst_step(fisst, scan.measurements, models, policy, settings)
            homht = homht_step(homht, scan.measurements, models, policy, settings)
            a = {h.label_key: h.weight for h in fisst.hypotheses}
            b = {h.label_key: h.weight for h in homht.hypotheses}
            if set(a) != set(b):
                return CheckResult("fisst_homht_equivalence", False, math.inf,
                                   f"seed {seed} scan {scan.scan.scan_index}: hypothesis sets differ")
            worst = max(worst, max(abs(a[key] - b[key]) for key in a))
    return CheckResult("fisst_homht_equivalence", worst <= atol, worst,
                       f"max weight difference {worst:.2e} over {seeds} seeds")


def closed_form_discrepancy(forest: HypothesisForest, Z: np.ndarray, models: ScenarioModels,
                            settings: EngineSettings) -> float:
    """Spread of (engine - closed-form) log-weights over the children of one scan.

    Only children whose detected births sit in their own pixel are compared; the
    difference must be the same constant for all of them.
    """
    scan_index = forest.scan_index + 1
    offsets = []
    for child in expand_forest(forest, Z, models, settings):
        provenance = child.provenance
        if provenance is None:
            continue
        parent = forest.hypotheses[provenance.parent]
        r = len(provenance.survivors)
        births = child.tracks[r:]
        detected_births = [(t, j) for t, j in zip(births, provenance.assignments[r:])
                           if j != NULL_MEASUREMENT]
        if any(models.birth.pixel_of(Z[j]) != t.label.origin[2] for t, j in detected_births):
            continue
        a = DataAssociation(provenance.assignments, len(Z))
        h_pred = predict_hypothesis(parent, BirthHypothesis(provenance.births),
                                    SurvivalHypothesis(provenance.survivors, parent.n), models, scan_index)
        existing = detected_likelihoods(h_pred, a, Z, models, tracks=range(r))
        closed = fisst_closed_form_weight(parent.log_weight, existing, child.n, r, len(Z), a.k,
                                          len(detected_births), models)
        offsets.append(child.log_weight - closed)
    if not offsets:
        return 0.0
    return float(max(offsets) - min(offsets))


def check_birth_factor(tol: float = 1e-9) -> CheckResult:
    """HOMHT and all-detected FISST weights differ by p_D^(n-r); the engine matches the closed form."""
    models = plane_models(p_D=0.9, lambda_C=0.01, beta=1.0, alpha=0.04, r=1e-6,
                          birth_pdf_mode="uniform", birth_prior_mode="poisson")
    worst = 0.0
    likelihoods = [-1.3, -0.4]
    for births in (1, 2, 3):
        n = 2 + births
        m = 4 + births
        k = m - (len(likelihoods) + births)
        fisst = fisst_closed_form_weight(0.0, likelihoods, n, 2, m, k, births, models)
        homht = homht_child_weight(0.0, likelihoods, n, m, k, births, models)
        ratio = math.exp(fisst - homht)
        worst = max(worst, abs(ratio - models.measurement.p_D ** births))
        variant = homht_child_weight(0.0, likelihoods, n, m, k, births, models, pd_factors=True)
        worst = max(worst, abs(fisst - variant))
    forest = initial_forest([GaussianBelief([3.0, 3.0], 0.01 * np.eye(2))])
    Z = np.array([[3.05, 2.95], [5.1, 7.3], [9.1, 0.9]])
    spread = closed_form_discrepancy(forest, Z, models, EngineSettings(birth_policy=BirthPolicy(max_p=2)))
    worst = max(worst, spread)
    return CheckResult("birth_factor", worst <= tol, worst,
                       f"max deviation {worst:.2e} (closed-form offset spread {spread:.2e})")


def _ratio_pair(models: ScenarioModels, rng: np.random.Generator) -> Tuple[float, float]:
    target = GaussianBelief(rng.uniform(2.0, 8.0, 2), 0.05 * np.eye(2))
    parent = initial_forest([target]).hypotheses[0]
    z0 = np.atleast_2d(target.mean + rng.normal(0.0, 0.05, 2))
    pixel = int(rng.integers(models.birth.M))
    z_star = models.birth.pixel_center(pixel)
    v, v_prime = undetected_birth_pair(parent, z0, (0,), (), pixel, models, 1)
    Z2 = np.vstack([z0, z_star])
    gamma, gamma_prime = grandchild_pair(v, v_prime, Z2, 1, (0,), models, 2)
    return math.exp(v.log_weight - v_prime.log_weight), math.exp(gamma.log_weight - gamma_prime.log_weight)


def check_undetected_birth_ratios(configurations: int = 100, seed: int = 0) -> CheckResult:
    """v/v' equals (1-p_D) alpha; gamma/gamma' stays below (1-p_D)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst_v = 0.0
    violations = 0
    for _ in range(configurations):
        p_D = float(rng.uniform(0.5, 0.99))
        alpha = float(rng.uniform(0.001, 0.2))
        models = plane_models(p_D=p_D, alpha=alpha, q=float(rng.uniform(0.01, 1.0)),
                              r=float(rng.uniform(0.001, 0.5)), birth_prior_mode="poisson")
        v_ratio, gamma_ratio = _ratio_pair(models, rng)
        expected = undetected_birth_ratio(models)
        worst_v = max(worst_v, abs(v_ratio - expected) / expected)
        if not gamma_ratio < 1.0 - p_D:
            violations += 1
    passed = worst_v <= 1e-12 and violations == 0
    return CheckResult("undetected_birth_ratios", passed, worst_v,
                       f"v/v' relative error {worst_v:.2e}; gamma/gamma' >= 1-p_D in "
                       f"{violations}/{configurations} configurations")


def check_poisson_limit(pixels: int = 100_000, expected_births: float = 2.0) -> CheckResult:
    """The binomial birth prior approaches e^(-lambda_B V) (lambda_B V_bar)^p for many pixels."""
    birth = BirthModel([0.0], [float(pixels)], (pixels,), expected_births / pixels)
    worst = 0.0
    for p in (0, 1, 2):
        exact = birth_prior(p, birth)
        limit = birth_prior_poisson_limit(p, birth)
        worst = max(worst, abs(exact - limit) / limit)
    return CheckResult("poisson_limit", worst < 1e-3, worst,
                       f"max relative error {worst:.2e} at M={pixels}")


def check_track_uniqueness(seeds: int = 100, scans: int = 5) -> CheckResult:
    """Distinct association histories give distinct beliefs; a duplicated measurement is caught."""
    models = plane_models(p_D=0.9, lambda_C=0.005, beta=1.0, alpha=0.0, r=0.05)
    targets = (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)),
               GaussianBelief([7.0, 6.0], 0.05 * np.eye(2)))
    smallest = math.inf
    for seed in range(seeds):
        report = track_uniqueness_experiment(seed, scans, models, targets)
        smallest = min(smallest, report.min_distance)
    control = track_uniqueness_experiment(0, scans, models, targets, inject_duplicate=True)
    passed = smallest > 1e-9 and not control.distinct
    return CheckResult("track_uniqueness", passed, smallest,
                       f"min belief distance {smallest:.2e} over {seeds} runs; "
                       f"duplicate control distance {control.min_distance:.2e}")


def pruning_soundness(models: ScenarioModels, scenario: Scenario, settings: EngineSettings,
                      max_hypotheses: int = 20) -> Tuple[float, float]:
    """Worst undetected-birth mass and worst companion ratio shortfall of drop_undetected_births.

    The shortfall is ``bound / ratio`` for the weakest removed hypothesis, where
    ``ratio`` is the weight of its companion without undetected births divided
    by its own; values <= 1 mean the bound holds.
    """
    policy = PruningPolicy(max_hypotheses=max_hypotheses, drop_undetected_births=True)
    bound = 1.0 / undetected_birth_ratio(models)
    rng = scenario_rng(scenario)
    measured = generate_measurements(generate_truth(scenario, rng), models, rng)
    forest = initial_forest(scenario.initial_targets)
    worst_mass = 0.0
    worst_shortfall = 0.0
    for scan in measured:
        children, _ = normalize_children(expand_forest(forest, scan.measurements, models, settings))
        pre = HypothesisForest(tuple(merge_duplicates(children)), forest.scan_index + 1).normalized()
        undetected_mass = math.fsum(h.weight for h in pre.hypotheses if has_undetected_birth(h))
        worst_mass = max(worst_mass, undetected_mass)
        weights = {h.label_key: h.log_weight for h in pre.hypotheses}
        for h in pre.hypotheses:
            if not has_undetected_birth(h):
                continue
            undetected = sum(1 for label in h.labels if label.is_undetected_birth)
            companion = tuple(sorted(label for label in h.labels if not label.is_undetected_birth))
            companion_log_weight: Optional[float] = weights.get(companion)
            if companion_log_weight is None:
                return worst_mass, math.inf
            ratio = math.exp(companion_log_weight - h.log_weight)
            worst_shortfall = max(worst_shortfall, bound ** undetected / ratio)
        forest = prune(pre, policy)
    return worst_mass, worst_shortfall


def check_pruning_soundness(scenarios: int = 50, scans: int = 5) -> CheckResult:
    """drop_undetected_births removes under 1% mass, always next to a much heavier companion."""
    worst_mass = 0.0
    worst_shortfall = 0.0
    settings = EngineSettings(birth_policy=BirthPolicy("measurement_gated", 1), gate_probability=0.999)
    for seed in range(scenarios):
        placement = np.random.Generator(np.random.PCG64(seed))
        models = plane_models(p_D=float(placement.uniform(0.9, 0.99)), alpha=0.01, birth_prior_mode="poisson")
        target = GaussianBelief(placement.uniform(1.0, 9.0, 2), 0.02 * np.eye(2))
        mass, shortfall = pruning_soundness(models, Scenario(models, scans, (target,), seed), settings)
        worst_mass = max(worst_mass, mass)
        worst_shortfall = max(worst_shortfall, shortfall)
    passed = worst_mass < 0.01 and worst_shortfall <= 1.0 + 1e-9
    return CheckResult("pruning_soundness", passed, worst_mass,
                       f"max dropped mass {worst_mass:.2e}; companion bound ratio {worst_shortfall:.3f}")


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "normalization": check_normalization,
    "oracle_equivalence": check_oracle_equivalence,
    "fisst_homht_equivalence": check_fisst_homht_equivalence,
    "birth_factor": check_birth_factor,
    "undetected_birth_ratios": check_undetected_birth_ratios,
    "poisson_limit": check_poisson_limit,
    "track_uniqueness": check_track_uniqueness,
    "pruning_soundness": check_pruning_soundness,
}


def run_verification_suite(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """Run the named checks (all by default); a check that raises is reported as failed."""
    selected = list(CHECKS) if not names else list(names)
    results = []
    for name in selected:
        if name not in CHECKS:
            results.append(CheckResult(name, False, math.nan, "unknown check"))
            continue
        try:
            result = CHECKS[name]()
        except FisstError as exc:
            result = CheckResult(name, False, math.nan, f"{type(exc).__name__}: {exc}")
        logger.info("%s: %s (%s)", name, "ok" if result.passed else "FAILED", result.detail)
        results.append(result)
    return results
