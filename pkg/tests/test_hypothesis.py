"""Tests for the hypothesis recursion and weight rules."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from fisst_mht.core.association import BirthHypothesis, BirthPolicy, DataAssociation, SurvivalHypothesis
from fisst_mht.core.belief import (
    NULL_MEASUREMENT,
    GaussianBelief,
    TrackLabel,
    marginal_likelihood,
    predict,
    update,
)
from fisst_mht.core.hypothesis import (
    EngineSettings,
    Hypothesis,
    HypothesisForest,
    Track,
    cardinality_distribution,
    expand_forest,
    fisst_closed_form_weight,
    fisst_step,
    homht_child_weight,
    homht_step,
    initial_forest,
    merge_duplicates,
    normalize_children,
    predict_hypothesis,
    update_hypothesis,
)
from fisst_mht.core.models import BirthModel, birth_pdf
from fisst_mht.core.pruning import PruningPolicy
from fisst_mht.core.sim import Scenario, generate_measurements, generate_truth, scenario_rng
from fisst_mht.core.verify import line_models, plane_models
from fisst_mht.exceptions import ExplosionGuardError, RangeError

PHI = NULL_MEASUREMENT
UNPRUNED = PruningPolicy(max_hypotheses=100_000)
NO_BIRTH = EngineSettings(birth_policy=BirthPolicy("none"))


def _parent(*means: float) -> Hypothesis:
    return initial_forest([GaussianBelief([m], [[0.25]]) for m in means]).hypotheses[0]


def test_predict_without_births_multiplies_no_birth_prior():
    """All survive, no births: beliefs predicted and weight times (1-alpha)^M."""
    models = line_models(alpha=0.001, pixels=2)
    h = predict_hypothesis(_parent(3.0), BirthHypothesis(), SurvivalHypothesis((0,), 1), models, 1)
    assert h.log_weight == pytest.approx(2 * math.log(0.999), abs=1e-15)
    expected = predict(GaussianBelief([3.0], [[0.25]]), models.motion)
    np.testing.assert_allclose(h.tracks[0].belief.cov, expected.cov)


def test_predict_birth_on_empty_hypothesis():
    """A birth in pixel 1 of an empty hypothesis gives one birth track."""
    models = line_models(alpha=0.1, pixels=2)
    empty = initial_forest([]).hypotheses[0]
    h = predict_hypothesis(empty, BirthHypothesis((1,)), SurvivalHypothesis((), 0), models, 4)
    assert h.n == 1
    assert h.tracks[0].label == TrackLabel.birth(4, 1)
    pdf = birth_pdf(1, models.birth, "gaussian")
    np.testing.assert_allclose(h.tracks[0].belief.mean, pdf.mean)
    assert h.log_weight == pytest.approx(math.log(0.1 * 0.9), abs=1e-12)


def test_predict_survival_mismatch():
    """The survival hypothesis must cover every track."""
    models = line_models()
    with pytest.raises(RangeError):
        predict_hypothesis(_parent(3.0), BirthHypothesis(), SurvivalHypothesis((), 2), models, 1)


def test_update_single_detection_no_clutter():
    """p_D = 1 and no clutter: the weight factor is the marginal likelihood."""
    models = line_models(p_D=1.0, lambda_C=0.0)
    h = _parent(3.0)
    Z = np.array([[3.4]])
    child = update_hypothesis(h, DataAssociation((0,), 1), Z, models, 1)
    expected = marginal_likelihood(h.tracks[0].belief, Z[0], models.measurement)
    assert child.log_weight == pytest.approx(expected)
    assert child.tracks[0].label.history == ((1, 0),)


def test_update_missed_detection():
    """A miss with no measurements: (1 - p_D) exp(-lambda_C V), belief unchanged."""
    models = line_models(p_D=0.8, lambda_C=0.05)
    h = _parent(3.0)
    child = update_hypothesis(h, DataAssociation((PHI,), 0), np.zeros((0, 1)), models, 1)
    assert math.exp(child.log_weight) == pytest.approx(0.2 * math.exp(-0.5))
    np.testing.assert_allclose(child.tracks[0].belief.mean, [3.0])


def test_update_all_clutter():
    """No targets, two clutter points: lambda_C^2 exp(-lambda_C V)."""
    models = line_models(lambda_C=0.05)
    empty = initial_forest([]).hypotheses[0]
    child = update_hypothesis(empty, DataAssociation((), 2), np.array([[1.0], [2.0]]), models, 1)
    assert math.exp(child.log_weight) == pytest.approx(0.05 ** 2 * math.exp(-0.5))


def test_degenerate_recursion():
    """One target, one measurement, p_D=1, no clutter, birth or death: one hypothesis of weight 1."""
    models = line_models(p_D=1.0, lambda_C=0.0)
    forest = initial_forest([GaussianBelief([3.0], [[0.25]])])
    Z = np.array([[3.3]])
    forest = fisst_step(forest, Z, models, UNPRUNED, NO_BIRTH)
    assert len(forest) == 1
    assert forest.hypotheses[0].weight == pytest.approx(1.0)
    expected, _ = update(predict(GaussianBelief([3.0], [[0.25]]), models.motion), Z[0], models.measurement)
    np.testing.assert_allclose(forest.hypotheses[0].tracks[0].belief.mean, expected.mean)
    assert forest.stats is not None and forest.stats.scan_index == 1


def test_separated_targets_pick_correct_matching():
    """Two far-apart targets with p_D=1: the correct matching dominates."""
    models = line_models(p_D=1.0, lambda_C=0.0, length=100.0)
    forest = initial_forest([GaussianBelief([20.0], [[0.25]]), GaussianBelief([80.0], [[0.25]])])
    forest = fisst_step(forest, np.array([[80.2], [19.9]]), models, UNPRUNED, NO_BIRTH)
    best = forest.map_hypothesis()
    assert best.weight > 0.99
    assert [label.history[-1][1] for label in best.labels] == [1, 0]


def test_weights_stay_normalized():
    """Hypothesis weights sum to one after every scan of a birth/death scenario."""
    models = plane_models(p_D=0.9, lambda_C=0.02, beta=0.95, alpha=0.01)
    targets = (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)),)
    settings = EngineSettings(birth_policy=BirthPolicy("measurement_gated", 1))
    for seed in range(3):
        scenario = Scenario(models, 5, targets, seed)
        rng = scenario_rng(scenario)
        forest = initial_forest(targets)
        for scan in generate_measurements(generate_truth(scenario, rng), models, rng):
            forest = fisst_step(forest, scan.measurements, models, PruningPolicy(30), settings)
            assert float(np.sum(forest.weights)) == pytest.approx(1.0, abs=1e-9)


def test_zero_measurement_scan_decays_cardinality():
    """With no measurements only the miss and survival factors act."""
    models = line_models(p_D=0.8, beta=0.9)
    forest = initial_forest([GaussianBelief([3.0], [[0.25]])])
    forest = fisst_step(forest, np.zeros((0, 1)), models, UNPRUNED, NO_BIRTH)
    rho = cardinality_distribution(forest)
    expected = 0.9 * 0.2 / (0.9 * 0.2 + 0.1)
    assert rho[1] == pytest.approx(expected)
    assert rho[0] == pytest.approx(1.0 - expected)


def test_fisst_equals_homht_without_births():
    """With a fixed target count both recursions give identical normalized weights."""
    models = plane_models(p_D=0.9, lambda_C=0.01, beta=1.0, alpha=0.0)
    targets = (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)), GaussianBelief([6.0, 5.0], 0.05 * np.eye(2)))
    scenario = Scenario(models, 3, targets, 7)
    rng = scenario_rng(scenario)
    fisst = homht = initial_forest(targets)
    for scan in generate_measurements(generate_truth(scenario, rng), models, rng):
        fisst = fisst_step(fisst, scan.measurements, models, UNPRUNED, NO_BIRTH)
        homht = homht_step(homht, scan.measurements, models, UNPRUNED, NO_BIRTH)
        a = {h.label_key: h.weight for h in fisst.hypotheses}
        b = {h.label_key: h.weight for h in homht.hypotheses}
        assert set(a) == set(b)
        for key in a:
            assert a[key] == pytest.approx(b[key], abs=1e-10)


def test_homht_seeds_births_from_measurements():
    """HOMHT births carry the measurement's pixel and are detected on creation."""
    models = line_models(p_D=0.9, alpha=0.1, lambda_C=0.05)
    forest = homht_step(initial_forest([]), np.array([[7.5]]), models, UNPRUNED,
                        EngineSettings(birth_policy=BirthPolicy(max_p=1)))
    labels = {label for h in forest.hypotheses for label in h.labels}
    assert labels == {TrackLabel.birth(1, 1).extend(1, 0)}
    assert cardinality_distribution(forest).keys() == {0, 1}


def test_parallel_expansion_matches_sequential():
    """Thread-pool expansion gives the same forest as the sequential path."""
    models = plane_models(p_D=0.9, lambda_C=0.02, beta=0.95, alpha=0.01)
    targets = (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)), GaussianBelief([7.0, 6.0], 0.05 * np.eye(2)))
    Z1 = np.array([[3.1, 2.9], [7.2, 6.1], [1.0, 9.0]])
    Z2 = np.array([[3.0, 3.2], [6.9, 6.0]])
    forests = []
    for workers in (1, 4):
        settings = EngineSettings(birth_policy=BirthPolicy("measurement_gated", 1), workers=workers)
        forest = initial_forest(targets)
        for Z in (Z1, Z2):
            forest = fisst_step(forest, Z, models, PruningPolicy(max_hypotheses=50), settings)
        forests.append(forest)
    assert [h.label_key for h in forests[0].hypotheses] == [h.label_key for h in forests[1].hypotheses]
    np.testing.assert_array_equal(forests[0].log_weights, forests[1].log_weights)


def test_expansion_records_provenance():
    """Every child records the parent, survivors, births and association it came from."""
    models = line_models(beta=0.9, alpha=0.1)
    forest = initial_forest([GaussianBelief([3.0], [[0.25]])])
    children = expand_forest(forest, np.array([[7.2]]), models,
                             EngineSettings(birth_policy=BirthPolicy("measurement_gated", 1)))
    # 2 survival subsets x 2 birth hypotheses, each with its associations
    assert len(children) == 2 + 3 + 1 + 2
    for child in children:
        assert child.provenance is not None
        assert child.provenance.parent == 0
        assert len(child.provenance.assignments) == child.n


def test_descendant_guard_reports_scan():
    """Exceeding max_descendants raises with the scan index."""
    models = line_models(lambda_C=0.5)
    forest = initial_forest([GaussianBelief([m], [[0.25]]) for m in (2.0, 4.0, 6.0)])
    Z = np.array([[2.0], [4.0], [6.0], [8.0]])
    with pytest.raises(ExplosionGuardError) as excinfo:
        fisst_step(forest, Z, models, UNPRUNED, EngineSettings(birth_policy=BirthPolicy("none"),
                                                               max_descendants=10))
    assert excinfo.value.scan_index == 1


def test_merge_and_normalize():
    """Children with the same labels merge; far-below children underflow away."""
    label = TrackLabel.initial(0).extend(1, 0)
    belief = GaussianBelief([0.0], [[1.0]])
    a = Hypothesis((Track(label, belief),), math.log(0.2))
    b = Hypothesis((Track(label, belief),), math.log(0.3))
    c = Hypothesis((Track(TrackLabel.initial(0).extend(1, PHI), belief),), -1000.0)
    merged = merge_duplicates([a, b, c])
    assert len(merged) == 2
    assert math.exp(merged[0].log_weight) == pytest.approx(0.5)
    normalized, dropped = normalize_children(merged)
    assert dropped == 1
    assert normalized[0].weight == pytest.approx(1.0)


def test_homht_child_weight_values():
    """Factor audit of the HOMHT weight."""
    models = replace(line_models(p_D=0.9, lambda_C=0.05),
                     birth=BirthModel.from_rate([0.0], [10.0], (10,), 0.5))
    assert math.exp(homht_child_weight(0.0, [], 1, 1, 0, 1, models)) == pytest.approx(0.5)
    assert math.exp(homht_child_weight(0.0, [], 0, 2, 2, 0, models)) == pytest.approx(0.05 ** 2)
    with pytest.raises(RangeError):
        homht_child_weight(0.0, [], 1, 3, 0, 0, models)


@pytest.mark.parametrize("births", [1, 2, 3])
def test_birth_discrepancy_factor(births):
    """All-detected FISST over HOMHT is p_D^(n-r); the p_D-factor variant matches FISST."""
    models = plane_models(p_D=0.9, alpha=0.04, birth_prior_mode="poisson")
    likelihoods = [-1.0, -2.5]
    n, m = 2 + births, 3 + births
    k = m - 2 - births
    fisst = fisst_closed_form_weight(0.0, likelihoods, n, 2, m, k, births, models)
    homht = homht_child_weight(0.0, likelihoods, n, m, k, births, models)
    assert math.exp(fisst - homht) == pytest.approx(0.9 ** births, rel=1e-12)
    variant = homht_child_weight(0.0, likelihoods, n, m, k, births, models, pd_factors=True)
    assert fisst == pytest.approx(variant, abs=1e-12)
    assert fisst_closed_form_weight(0.0, likelihoods, n, 2, m, k, births, models,
                                    births_supported=False) == -math.inf


def test_cardinality_distribution():
    """rho sums weights by track count."""
    belief = GaussianBelief([0.0], [[1.0]])
    one = Hypothesis((Track(TrackLabel.initial(0), belief),), math.log(0.7))
    two = Hypothesis((Track(TrackLabel.initial(0), belief), Track(TrackLabel.initial(1), belief)),
                     math.log(0.3))
    rho = cardinality_distribution(HypothesisForest((one, two)))
    assert rho == pytest.approx({1: 0.7, 2: 0.3})
    assert cardinality_distribution(HypothesisForest((two.with_log_weight(0.0),))) == {2: 1.0}


def test_fixed_cardinality_is_conserved():
    """No birth, death or clutter: cardinality stays at the initial count."""
    models = line_models(p_D=0.9, lambda_C=0.0, length=30.0)
    forest = initial_forest([GaussianBelief([m], [[0.25]]) for m in (5.0, 15.0, 25.0)])
    for Z in (np.array([[5.1], [15.2]]), np.array([[24.8]])):
        forest = fisst_step(forest, Z, models, UNPRUNED, NO_BIRTH)
    assert cardinality_distribution(forest) == pytest.approx({3: 1.0})


def test_duplicate_labels_rejected():
    """A hypothesis cannot hold the same track twice."""
    belief = GaussianBelief([0.0], [[1.0]])
    with pytest.raises(RangeError):
        Hypothesis((Track(TrackLabel.initial(0), belief), Track(TrackLabel.initial(0), belief)))


def test_track_order_does_not_change_weights():
    """Storing the tracks of a hypothesis in another order changes no weight and no cardinality."""
    models = line_models(beta=0.9, alpha=0.01)
    settings = EngineSettings(birth_policy=BirthPolicy("all_pixels", 1))
    parent = _parent(2.0, 5.0, 8.0)
    Z = np.array([[2.1], [5.2], [9.0]])
    stored = fisst_step(HypothesisForest((parent,)), Z, models, UNPRUNED, settings)
    shuffled = fisst_step(HypothesisForest((parent.permuted((2, 0, 1)),)), Z, models, UNPRUNED, settings)
    expected = {h.label_key: h.weight for h in stored.hypotheses}
    actual = {h.label_key: h.weight for h in shuffled.hypotheses}
    assert set(actual) == set(expected)
    for key, weight in expected.items():
        assert actual[key] == pytest.approx(weight, rel=1e-9)
    rho, rho_shuffled = cardinality_distribution(stored), cardinality_distribution(shuffled)
    assert list(rho) == list(rho_shuffled)
    np.testing.assert_allclose(list(rho_shuffled.values()), list(rho.values()), rtol=1e-9)
    with pytest.raises(RangeError):
        parent.permuted((0, 0, 1))


def test_track_beliefs_stay_distinct_over_fifty_scans():
    """Distinct labels never share a belief along a long noisy run."""
    models = plane_models(p_D=0.9, lambda_C=0.005, beta=1.0, alpha=0.0, r=0.05)
    targets = (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)), GaussianBelief([7.0, 6.0], 0.05 * np.eye(2)))
    scenario = Scenario(models, 50, targets, 4)
    rng = scenario_rng(scenario)
    settings = EngineSettings(birth_policy=BirthPolicy("none"), gate_probability=0.999)
    forest = initial_forest(targets)
    for scan in generate_measurements(generate_truth(scenario, rng), models, rng):
        forest = fisst_step(forest, scan.measurements, models, PruningPolicy(max_hypotheses=20), settings)
        beliefs = {t.label: t.belief.parameters() for h in forest.hypotheses for t in h.tracks}
        assert len(beliefs) >= 2
        assert pdist(np.stack(list(beliefs.values())), metric="chebyshev").min() > 1e-9
    assert forest.scan_index == 50
