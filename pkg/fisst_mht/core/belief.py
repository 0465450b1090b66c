"""Single-target beliefs and their Kalman arithmetic.

A belief is either a :class:`GaussianBelief` or, for a freshly born target in
uniform birth mode, a :class:`UniformBoxBelief`. Boxes are moment-matched to a
Gaussian before any prediction.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import log_ndtr

from fisst_mht.exceptions import DimensionError, NumericalError

if TYPE_CHECKING:
    from fisst_mht.core.models import MeasurementModel, MotionModel

NULL_MEASUREMENT = -1
"""Measurement index of the null association phi."""

_PD_TOL = 1e-10
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_TAIL_BOUND = 30.0
_FAR_EDGE = 50.0


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian single-target pdf N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        cov = _symmetrize(cov)
        try:
            np.linalg.cholesky(cov + _PD_TOL * np.eye(mean.size))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("belief covariance is not positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def to_gaussian(self) -> "GaussianBelief":
        return self

    def parameters(self) -> np.ndarray:
        """Flat (mean, cov) parameter vector, used for belief distances."""
        return np.concatenate([self.mean, self.cov.reshape(-1)])


@dataclass(frozen=True, eq=False)
class UniformBoxBelief:
    """Uniform pdf on the axis-aligned box [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise DimensionError("box corners must have the same shape")
        if np.any(upper <= lower):
            raise DimensionError("box must have positive extent on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def cov(self) -> np.ndarray:
        return np.diag((self.upper - self.lower) ** 2 / 12.0)

    def density(self, x: np.ndarray) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        inside = bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        return 1.0 / self.volume if inside else 0.0

    def to_gaussian(self) -> GaussianBelief:
        """Moment-matched Gaussian of the box."""
        return GaussianBelief(self.mean, self.cov)

    def parameters(self) -> np.ndarray:
        return self.to_gaussian().parameters()


Belief = Union[GaussianBelief, UniformBoxBelief]


@dataclass(frozen=True, order=True)
class TrackLabel:
    """Identity of a track: its origin plus the full association history.

    ``origin`` is ``(0, k, 0)`` for initial target ``k`` and ``(1, tau, xi)`` for a
    target born at scan ``tau`` in pixel ``xi``. ``history`` holds one
    ``(scan, measurement index)`` pair per processed scan, with
    :data:`NULL_MEASUREMENT` for a missed detection.
    """

    origin: Tuple[int, int, int]
    history: Tuple[Tuple[int, int], ...] = ()

    @classmethod
    def initial(cls, k: int) -> "TrackLabel":
        return cls((0, k, 0))

    @classmethod
    def birth(cls, scan: int, pixel: int) -> "TrackLabel":
        return cls((1, scan, pixel))

    @property
    def is_birth(self) -> bool:
        return self.origin[0] == 1

    @property
    def first_assignment(self) -> Optional[int]:
        return self.history[0][1] if self.history else None

    @property
    def is_undetected_birth(self) -> bool:
        """Born and assigned phi on its creation scan."""
        return (self.is_birth and bool(self.history)
                and self.history[0][0] == self.origin[1]
                and self.history[0][1] == NULL_MEASUREMENT)

    def extend(self, scan: int, measurement_index: int) -> "TrackLabel":
        return TrackLabel(self.origin, self.history + ((scan, measurement_index),))

    @property
    def digest(self) -> str:
        """Rolling hash over the origin and each (scan, measurement) pair."""
        state = hashlib.blake2b(repr(self.origin).encode(), digest_size=8).digest()
        for scan, index in self.history:
            state = hashlib.blake2b(state + f"{scan}:{index}".encode(), digest_size=8).digest()
        return state.hex()

    def __str__(self) -> str:
        kind = "b" if self.is_birth else "t"
        origin = f"{kind}{self.origin[1]}" + (f"p{self.origin[2]}" if self.is_birth else "")
        steps = ".".join("x" if j == NULL_MEASUREMENT else str(j) for _, j in self.history)
        return f"{origin}:{steps}" if steps else origin


def predict(b: Belief, motion: "MotionModel") -> GaussianBelief:
    """Kalman prediction: mean' = F mean, cov' = F cov F^T + G Q G^T."""
    g = b.to_gaussian()
    if g.dim != motion.dim:
        raise DimensionError(f"belief dimension {g.dim} != motion dimension {motion.dim}")
    mean = motion.F @ g.mean
    cov = motion.F @ g.cov @ motion.F.T + motion.process_cov
    return GaussianBelief(mean, _symmetrize(cov))


def _innovation(g: GaussianBelief, z: np.ndarray, meas: "MeasurementModel"
                ) -> Tuple[np.ndarray, np.ndarray, Tuple[np.ndarray, bool], float]:
    if g.dim != meas.state_dim:
        raise DimensionError(f"belief dimension {g.dim} != measurement state dimension {meas.state_dim}")
    z = np.atleast_1d(np.asarray(z, dtype=float)).reshape(-1)
    if z.size != meas.dim:
        raise DimensionError(f"measurement of size {z.size}, expected {meas.dim}")
    residual = z - meas.H @ g.mean
    S = _symmetrize(meas.H @ g.cov @ meas.H.T + meas.R)
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return residual, S, factor, log_det


def _gaussian_log_likelihood(residual: np.ndarray, factor: Tuple[np.ndarray, bool],
                             log_det: float) -> float:
    mahalanobis = float(residual @ cho_solve(factor, residual))
    return -0.5 * (mahalanobis + log_det + residual.size * math.log(2.0 * math.pi))


def _log_interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) for standardized bounds a < b, stable in both tails."""
    upper_tail = a > 0
    lo = np.where(upper_tail, -b, a)
    hi = np.where(upper_tail, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


def _box_is_exact(meas: "MeasurementModel") -> bool:
    diagonal = np.diag(meas.R)
    return (meas.is_full_state and bool(np.all(diagonal > 0.0))
            and bool(np.allclose(meas.R, np.diag(diagonal))))


def _box_bounds(b: UniformBoxBelief, z: np.ndarray, meas: "MeasurementModel"
                ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sigma = np.sqrt(np.diag(meas.R))
    return (b.lower - z) / sigma, (b.upper - z) / sigma, sigma


def _box_log_likelihood(b: UniformBoxBelief, z: np.ndarray, meas: "MeasurementModel") -> float:
    a, c, _ = _box_bounds(b, z, meas)
    return float(np.sum(_log_interval_mass(a, c))) - math.log(b.volume)


def _truncated_normal_moments(a: np.ndarray, c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a standard normal truncated to [a, c], per axis.

    Intervals more than 30 sigmas out use tail expansions; the direct formula
    cancels to nothing there.
    """
    mirrored = (a + c) < 0.0
    lo = np.where(mirrored, -c, a)
    hi = np.where(mirrored, -a, c)
    with np.errstate(all="ignore"):
        log_z = _log_interval_mass(lo, hi)
        p_lo = np.exp(-0.5 * lo * lo - _HALF_LOG_2PI - log_z)
        p_hi = np.exp(-0.5 * hi * hi - _HALF_LOG_2PI - log_z)
        mean = p_lo - p_hi
        var = 1.0 + lo * p_lo - hi * p_hi - mean * mean

        # inverse Mills ratio series when hi is far, else a rate-lo exponential on [lo, hi]
        x = 1.0 / (lo * lo)
        series_mean = lo + (1.0 - x * (2.0 - x * (10.0 - 74.0 * x))) / lo
        series_var = x * (1.0 - x * (6.0 - x * (50.0 - 518.0 * x)))
        u = lo * (hi - lo)
        half = 0.5 * u
        exponential_mean = lo + (1.0 - u / np.expm1(u)) / lo
        exponential_var = x * np.where(u < 1e-3, u * u / 12.0, 1.0 - (half / np.sinh(half)) ** 2)
        far = u >= _FAR_EDGE
        tail_mean = np.where(far, series_mean, exponential_mean)
        tail_var = np.where(far, series_var, exponential_var)

    in_tail = lo >= _TAIL_BOUND
    mean = np.clip(np.where(in_tail, tail_mean, mean), lo, hi)
    var = np.clip(np.where(in_tail, tail_var, var), 0.0, (hi - lo) ** 2 / 4.0)
    return np.where(mirrored, -mean, mean), var


def _box_update(b: UniformBoxBelief, z: np.ndarray, meas: "MeasurementModel"
                ) -> Tuple[Optional[GaussianBelief], float]:
    log_likelihood = _box_log_likelihood(b, z, meas)
    if not np.isfinite(log_likelihood):
        return None, -math.inf
    a, c, sigma = _box_bounds(b, z, meas)
    mean, var = _truncated_normal_moments(a, c)
    posterior = GaussianBelief(z + sigma * mean, np.diag(sigma * sigma * var))
    return posterior, log_likelihood


def update(b: Belief, z: np.ndarray, meas: "MeasurementModel") -> Tuple[Belief, float]:
    """Bayes update of one belief with one measurement.

    Gaussian beliefs get the Kalman update with a Joseph-form covariance. Boxes
    get the exact likelihood and a truncated-normal posterior (moment-matched)
    when H = I and R is diagonal. Returns the posterior and log p(z).
    A measurement with zero likelihood returns the prior unchanged and -inf.
    """
    if isinstance(b, UniformBoxBelief):
        z = np.atleast_1d(np.asarray(z, dtype=float)).reshape(-1)
        if _box_is_exact(meas):
            posterior, log_likelihood = _box_update(b, z, meas)
            return (posterior if posterior is not None else b), log_likelihood
        b = b.to_gaussian()
    residual, S, factor, log_det = _innovation(b, z, meas)
    gain = cho_solve(factor, meas.H @ b.cov).T
    mean = b.mean + gain @ residual
    joseph = np.eye(b.dim) - gain @ meas.H
    cov = joseph @ b.cov @ joseph.T + gain @ meas.R @ gain.T
    return GaussianBelief(mean, _symmetrize(cov)), _gaussian_log_likelihood(residual, factor, log_det)


def marginal_likelihood(b: Belief, z: np.ndarray, meas: "MeasurementModel") -> float:
    """log of the integral of p(z | x) b(x) dx, without forming the posterior."""
    if isinstance(b, UniformBoxBelief):
        if _box_is_exact(meas):
            z = np.atleast_1d(np.asarray(z, dtype=float)).reshape(-1)
            if z.size != b.dim:
                raise DimensionError(f"measurement of size {z.size}, expected {b.dim}")
            return _box_log_likelihood(b, z, meas)
        b = b.to_gaussian()
    residual, _, factor, log_det = _innovation(b, z, meas)
    return _gaussian_log_likelihood(residual, factor, log_det)


def mahalanobis_squared(b: Belief, z: np.ndarray, meas: "MeasurementModel") -> float:
    """Squared Mahalanobis distance of z from the predicted measurement of b."""
    residual, _, factor, _ = _innovation(b.to_gaussian(), z, meas)
    return float(residual @ cho_solve(factor, residual))
