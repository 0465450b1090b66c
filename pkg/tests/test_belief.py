"""Tests for single-target beliefs, track labels and Kalman arithmetic."""

import math

import numpy as np
import pytest
from scipy.stats import norm, truncnorm

from fisst_mht.core.belief import (
    NULL_MEASUREMENT,
    GaussianBelief,
    TrackLabel,
    UniformBoxBelief,
    mahalanobis_squared,
    marginal_likelihood,
    predict,
    update,
)
from fisst_mht.core.models import MeasurementModel, MotionModel
from fisst_mht.exceptions import DimensionError, NumericalError


def test_predict_scalar():
    """Scalar prediction adds process variance."""
    b = predict(GaussianBelief([0.0], [[1.0]]), MotionModel([[1.0]], [[1.0]], [[1.0]]))
    np.testing.assert_allclose(b.mean, [0.0])
    np.testing.assert_allclose(b.cov, [[2.0]])
    b = predict(GaussianBelief([3.0], [[0.5]]), MotionModel([[2.0]], [[1.0]], [[0.1]]))
    np.testing.assert_allclose(b.mean, [6.0])
    np.testing.assert_allclose(b.cov, [[2.1]])


def test_predict_identity_is_noop():
    """F = I and Q = 0 leave the belief unchanged."""
    prior = GaussianBelief([1.0, 2.0], [[1.0, 0.2], [0.2, 2.0]])
    b = predict(prior, MotionModel(np.eye(2), np.eye(2), np.zeros((2, 2))))
    np.testing.assert_allclose(b.mean, prior.mean)
    np.testing.assert_allclose(b.cov, prior.cov)


def test_update_scalar():
    """Scalar Kalman update and its marginal likelihood."""
    meas = MeasurementModel([[1.0]], [[1.0]], 0.9)
    posterior, log_likelihood = update(GaussianBelief([0.0], [[1.0]]), np.array([2.0]), meas)
    np.testing.assert_allclose(posterior.mean, [1.0])
    np.testing.assert_allclose(posterior.cov, [[0.5]])
    assert math.exp(log_likelihood) == pytest.approx(0.103777, abs=1e-6)


def test_confirming_measurement_with_small_noise():
    """z = H mean with tiny R keeps the mean and collapses the covariance."""
    meas = MeasurementModel(np.eye(2), 1e-8 * np.eye(2), 0.9)
    prior = GaussianBelief([1.0, -1.0], np.eye(2))
    posterior, _ = update(prior, prior.mean, meas)
    np.testing.assert_allclose(posterior.mean, prior.mean, atol=1e-12)
    assert np.all(np.diag(posterior.cov) < 1e-7)


def test_marginal_likelihood_values():
    """log N(z; H mean, H P H^T + R)."""
    meas = MeasurementModel([[1.0]], [[1.0]], 0.9)
    prior = GaussianBelief([0.0], [[1.0]])
    assert marginal_likelihood(prior, np.array([0.0]), meas) == pytest.approx(-0.5 * math.log(4 * math.pi))
    assert marginal_likelihood(prior, np.array([2.0]), meas) == pytest.approx(-2.26551, abs=1e-5)
    flat = MeasurementModel([[1.0]], [[1e8]], 0.9)
    S = 1e8 + 1.0
    for z in (0.0, 50.0):
        expected = -0.5 * math.log(2 * math.pi * S) - z * z / (2 * S)
        assert marginal_likelihood(prior, np.array([z]), flat) == pytest.approx(expected, rel=1e-12)


def test_mahalanobis_squared():
    """Squared innovation distance."""
    meas = MeasurementModel([[1.0]], [[1.0]], 0.9)
    assert mahalanobis_squared(GaussianBelief([0.0], [[1.0]]), np.array([2.0]), meas) == pytest.approx(2.0)


def test_singular_innovation_raises():
    """A degenerate innovation covariance is an explicit numerical error."""
    meas = MeasurementModel([[0.0]], [[0.0]], 0.9)
    with pytest.raises(NumericalError):
        update(GaussianBelief([0.0], [[1.0]]), np.array([0.0]), meas)


def test_belief_validation():
    """Shapes and positive definiteness are checked on construction."""
    with pytest.raises(DimensionError):
        GaussianBelief([0.0, 1.0], [[1.0]])
    with pytest.raises(NumericalError):
        GaussianBelief([0.0], [[-1.0]])
    with pytest.raises(DimensionError):
        UniformBoxBelief([1.0], [0.0])


def test_box_update_is_exact():
    """A uniform box has the normal-CDF likelihood and a truncated-normal posterior."""
    meas = MeasurementModel([[1.0]], [[0.25]], 0.9)
    box = UniformBoxBelief([0.0], [2.0])
    z = np.array([1.5])
    posterior, log_likelihood = update(box, z, meas)
    expected = (norm.cdf(2.0, 1.5, 0.5) - norm.cdf(0.0, 1.5, 0.5)) / 2.0
    assert math.exp(log_likelihood) == pytest.approx(expected, rel=1e-12)
    assert isinstance(posterior, GaussianBelief)
    assert 0.0 < posterior.mean[0] < 2.0
    assert posterior.cov[0, 0] < box.cov[0, 0]


def test_box_far_measurement_has_tiny_likelihood():
    """Far measurements keep a finite, very negative log-likelihood in the tails."""
    meas = MeasurementModel([[1.0]], [[1e-4]], 0.9)
    log_likelihood = marginal_likelihood(UniformBoxBelief([0.0], [1.0]), np.array([1.5]), meas)
    assert log_likelihood < -1000.0


def test_box_moments():
    """Moment matching of the uniform box."""
    g = UniformBoxBelief([0.0, 2.0], [1.0, 4.0]).to_gaussian()
    np.testing.assert_allclose(g.mean, [0.5, 3.0])
    np.testing.assert_allclose(g.cov, np.diag([1.0 / 12.0, 4.0 / 12.0]))


def test_track_labels():
    """Labels compare by origin and full history."""
    a = TrackLabel.initial(0).extend(1, 0).extend(2, NULL_MEASUREMENT)
    b = TrackLabel.initial(0).extend(1, 0).extend(2, NULL_MEASUREMENT)
    c = TrackLabel.initial(0).extend(1, NULL_MEASUREMENT).extend(2, 0)
    assert a == b and hash(a) == hash(b)
    assert a != c
    assert a.digest == b.digest and a.digest != c.digest
    assert str(a) == "t0:0.x"
    born = TrackLabel.birth(3, 2).extend(3, NULL_MEASUREMENT)
    assert born.is_birth and born.is_undetected_birth
    assert str(born) == "b3p2:x"
    assert not TrackLabel.birth(3, 2).extend(3, 1).is_undetected_birth
    assert not a.is_undetected_birth


def test_box_update_matches_truncated_normal():
    """Interior measurements give the truncated-normal moments."""
    meas = MeasurementModel([[1.0]], [[0.25]], 0.9)
    posterior, _ = update(UniformBoxBelief([0.0], [2.0]), np.array([1.5]), meas)
    mean, var = truncnorm.stats(-3.0, 1.0, loc=1.5, scale=0.5, moments="mv")
    np.testing.assert_allclose(posterior.mean, [mean], rtol=1e-10)
    np.testing.assert_allclose(posterior.cov, [[var]], rtol=1e-8)


def test_box_update_far_measurement_small_noise():
    """A measurement thousands of sigmas outside the box keeps a proper posterior."""
    meas = MeasurementModel(np.eye(2), 1e-6 * np.eye(2), 0.9)
    box = UniformBoxBelief([2.0, 2.0], [4.0, 4.0])
    z = np.array([5.1, 7.3])
    posterior, log_likelihood = update(box, z, meas)
    assert np.isfinite(log_likelihood)
    assert log_likelihood == pytest.approx(marginal_likelihood(box, z, meas))
    assert np.all(posterior.mean <= 4.0)
    np.testing.assert_allclose(posterior.mean, [4.0, 4.0], atol=1e-5)
    np.testing.assert_allclose(np.diag(posterior.cov), [(1e-3 / 1100.0) ** 2, (1e-3 / 3300.0) ** 2],
                               rtol=1e-3)


@pytest.mark.parametrize("z", [1.29, 1.31, -0.29, -0.31])
def test_box_tail_variance_is_continuous(z):
    """Either side of the tail switch the variance follows the Mills ratio expansion."""
    meas = MeasurementModel([[1.0]], [[1e-4]], 0.9)
    posterior, _ = update(UniformBoxBelief([0.0], [1.0]), np.array([z]), meas)
    distance = (z - 1.0) / 0.01 if z > 1.0 else -z / 0.01
    x = 1.0 / distance**2
    expected = 1e-4 * x * (1.0 - 6.0 * x + 50.0 * x**2)
    assert posterior.cov[0, 0] == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize("H", [np.eye(2), np.array([[1.0, 0.0]]), np.array([[0.6, 0.8]])])
def test_update_never_grows_covariance(H):
    """prior cov - posterior cov is positive semidefinite."""
    rng = np.random.Generator(np.random.PCG64(7))
    root = rng.normal(size=(2, 2))
    prior = GaussianBelief(rng.normal(size=2), root @ root.T + 0.1 * np.eye(2))
    R = 0.3 * np.eye(H.shape[0])
    posterior, _ = update(prior, rng.normal(size=H.shape[0]), MeasurementModel(H, R, 0.9))
    assert np.linalg.eigvalsh(prior.cov - posterior.cov).min() >= -1e-12


def test_identity_prediction_grows_every_eigenvalue():
    """With F = I and G Q G^T positive definite each ordered eigenvalue strictly increases."""
    prior = GaussianBelief([1.0, 2.0], [[1.0, 0.4], [0.4, 0.5]])
    predicted = predict(prior, MotionModel(np.eye(2), np.eye(2), np.diag([0.01, 0.02])))
    assert np.all(np.linalg.eigvalsh(predicted.cov) > np.linalg.eigvalsh(prior.cov))
