"""Tests for the simulator, the tracker driver and scoring."""

import numpy as np
import pytest

from fisst_mht.core.association import BirthPolicy
from fisst_mht.core.belief import GaussianBelief
from fisst_mht.core.hypothesis import EngineSettings
from fisst_mht.core.pruning import PruningPolicy
from fisst_mht.core.sim import (
    CLUTTER_ORIGIN,
    MeasurementScan,
    RunSettings,
    Scenario,
    effective_policy,
    generate_measurements,
    generate_truth,
    run,
    scenario_rng,
    score,
    track,
)
from fisst_mht.core.verify import line_models, plane_models
from fisst_mht.exceptions import ConfigError, DimensionError

ONE_TARGET = (GaussianBelief([5.0], [[0.01]]),)


def _simulate(scenario):
    rng = scenario_rng(scenario)
    truth = generate_truth(scenario, rng)
    return truth, generate_measurements(truth, scenario.models, rng)


def test_simulation_is_deterministic():
    """The same seed reproduces truth and measurements exactly."""
    scenario = Scenario(plane_models(alpha=0.05, lambda_C=0.02), 6,
                        (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)),), 11)
    truth_a, scans_a = _simulate(scenario)
    truth_b, scans_b = _simulate(scenario)
    for a, b in zip(truth_a, truth_b):
        np.testing.assert_array_equal(a.states(2), b.states(2))
    for a, b in zip(scans_a, scans_b):
        np.testing.assert_array_equal(a.measurements, b.measurements)
        assert a.origins == b.origins
    assert [s.scan_index for s in truth_a] == list(range(1, 7))


def test_no_birth_no_death_keeps_identities():
    """alpha = 0 and beta = 1 keep the initial targets for the whole horizon."""
    targets = (GaussianBelief([2.0], [[0.01]]), GaussianBelief([8.0], [[0.01]]))
    truth, _ = _simulate(Scenario(line_models(alpha=0.0, beta=1.0), 10, targets, 3))
    assert all(tuple(t.identity for t in scan.targets) == (0, 1) for scan in truth)


def test_certain_death():
    """beta = 0 and alpha = 0 leave no targets after the first scan."""
    truth, scans = _simulate(Scenario(line_models(alpha=0.0, beta=0.0, lambda_C=0.0), 3, ONE_TARGET, 0))
    assert all(scan.n == 0 for scan in truth)
    assert all(len(scan.measurements) == 0 for scan in scans)


def test_births_get_new_identities_inside_their_pixel():
    """Spawned targets take fresh identities and start within the field of view."""
    truth, _ = _simulate(Scenario(line_models(alpha=0.5, beta=1.0, q=0.0), 4, (), 5))
    identities = [t.identity for scan in truth for t in scan.targets]
    assert identities and min(identities) == 0
    for scan in truth:
        assert np.all((scan.states(1) >= 0.0) & (scan.states(1) < 10.0))


def test_exact_measurements_without_noise():
    """p_D = 1, no clutter and R = 0: one exact measurement per target."""
    truth, scans = _simulate(Scenario(line_models(p_D=1.0, lambda_C=0.0, r=0.0), 5, ONE_TARGET, 2))
    for truth_scan, scan in zip(truth, scans):
        assert scan.origins == (0,)
        np.testing.assert_allclose(scan.measurements, truth_scan.states(1))


def test_detection_rate():
    """The detected fraction is close to p_D."""
    _, scans = _simulate(Scenario(line_models(p_D=0.8, lambda_C=0.0, beta=1.0), 500, ONE_TARGET, 9))
    rate = np.mean([len(scan.measurements) for scan in scans])
    assert rate == pytest.approx(0.8, abs=0.06)


def test_clutter_counts_and_tags():
    """Clutter is Poisson with mean lambda_C V, uniform in the FOV and tagged as clutter."""
    _, scans = _simulate(Scenario(line_models(lambda_C=0.5, alpha=0.0), 200, (), 4))
    counts = [len(scan.measurements) for scan in scans]
    assert np.mean(counts) == pytest.approx(5.0, abs=0.6)
    for scan in scans:
        assert all(origin == CLUTTER_ORIGIN for origin in scan.origins)
        assert np.all((scan.measurements >= 0.0) & (scan.measurements < 10.0))
    assert scans[0].to_dict()["origins"] == list(scans[0].origins)


def test_scenario_validation():
    """Bad horizons, dimensions and duplicate targets are rejected."""
    models = line_models()
    with pytest.raises(ConfigError):
        Scenario(models, 0, ONE_TARGET)
    with pytest.raises(DimensionError):
        Scenario(models, 3, (GaussianBelief([1.0, 1.0], np.eye(2)),))
    with pytest.raises(ConfigError):
        Scenario(models, 3, ONE_TARGET * 2)


def test_track_checks_scan_order():
    """Scans must arrive as 1, 2, 3, ..."""
    scans = [MeasurementScan(2, np.zeros((0, 1)))]
    with pytest.raises(ConfigError):
        track(scans, line_models(), ONE_TARGET)
    with pytest.raises(ConfigError):
        RunSettings(mode="jpda")  # type: ignore[arg-type]


def test_effective_policy():
    """The all-births-detected mode switches the drop rule on."""
    policy = PruningPolicy(max_hypotheses=5)
    assert effective_policy("fisst_all_births_detected", policy).drop_undetected_births
    assert effective_policy("fisst", policy) == policy


@pytest.mark.parametrize("mode", ["fisst", "homht", "fisst_all_births_detected"])
def test_run_records(mode):
    """One record per scan, with truth, origins and normalized cardinality."""
    models = plane_models(alpha=0.01, lambda_C=0.01)
    scenario = Scenario(models, 4, (GaussianBelief([3.0, 3.0], 0.05 * np.eye(2)),), 1)
    engine = EngineSettings(birth_policy=BirthPolicy("measurement_gated", 1))
    records = run(scenario, mode, PruningPolicy(max_hypotheses=20), engine, top_hypotheses=3)
    assert [r.scan_index for r in records] == [1, 2, 3, 4]
    for record in records:
        assert record.truth is not None and record.origins is not None
        assert len(record.origins) == len(record.measurements)
        assert sum(record.cardinality.values()) == pytest.approx(1.0)
        assert 1 <= len(record.top_hypotheses) <= 3
        assert record.top_hypotheses[0].weight >= record.top_hypotheses[-1].weight
        assert set(record.to_dict()) >= {"scan", "measurements", "hypotheses", "cardinality",
                                         "map_estimates", "stats"}
        if mode == "fisst_all_births_detected":
            for summary in record.top_hypotheses:
                assert not any(label.startswith("b") and ":x" in label for label in summary.labels)


def test_score_easy_scenario():
    """A single well-observed target is tracked with the right count and small error."""
    models = line_models(p_D=1.0, lambda_C=0.0, r=0.01, q=0.01)
    records = run(Scenario(models, 5, ONE_TARGET, 8), engine=EngineSettings(birth_policy=BirthPolicy("none")))
    metrics = score(records, models)
    assert metrics.map_cardinality_accuracy == 1.0
    assert metrics.mean_cardinality_error == 0.0
    assert metrics.rmse is not None and metrics.rmse < 0.3
    assert metrics.to_dict()["scans"][0]["true_n"] == 1


def test_score_needs_truth():
    """Records from track() alone cannot be scored."""
    models = line_models()
    records = track([MeasurementScan(1, np.array([[5.0]]))], models, ONE_TARGET)
    with pytest.raises(ConfigError):
        score(records, models)
