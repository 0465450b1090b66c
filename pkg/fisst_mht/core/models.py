"""Scenario parameters and the scalar prior probabilities of the hypothesis alphabets.

Every prior is computed in the log domain (``log_*``); the linear versions are
thin ``exp`` wrappers for callers that want probabilities.
"""

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, xlogy

from fisst_mht.core.belief import GaussianBelief, UniformBoxBelief
from fisst_mht.exceptions import ConfigError, DimensionError, RangeError

BirthPdfMode = Literal["gaussian", "uniform"]
BirthPriorMode = Literal["binomial", "poisson"]

_SYMMETRY_TOL = 1e-9


def _as_matrix(value: Union[Sequence[Sequence[float]], np.ndarray], name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {matrix.shape}")
    return matrix


def _check_covariance(matrix: np.ndarray, name: str) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, atol=_SYMMETRY_TOL):
        raise ConfigError(f"{name} must be symmetric")
    smallest = float(np.linalg.eigvalsh(matrix).min()) if matrix.size else 0.0
    if smallest < -_SYMMETRY_TOL:
        raise ConfigError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Linear motion x' = F x + G w with w ~ N(0, Q)."""

    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray

    def __post_init__(self) -> None:
        F = _as_matrix(self.F, "F")
        G = _as_matrix(self.G, "G")
        Q = _as_matrix(self.Q, "Q")
        if F.shape[0] != F.shape[1]:
            raise DimensionError(f"F must be square, got shape {F.shape}")
        if G.shape[0] != F.shape[0]:
            raise DimensionError(f"G has {G.shape[0]} rows, state dimension is {F.shape[0]}")
        if Q.shape != (G.shape[1], G.shape[1]):
            raise DimensionError(f"Q must be {G.shape[1]}x{G.shape[1]}, got {Q.shape}")
        _check_covariance(Q, "Q")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return int(self.F.shape[0])

    @property
    def process_cov(self) -> np.ndarray:
        """G Q G^T, the additive covariance of one prediction step."""
        cov = self.G @ self.Q @ self.G.T
        return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Linear measurement z = H x + v with v ~ N(0, R), detected with probability p_D."""

    H: np.ndarray
    R: np.ndarray
    p_D: float

    def __post_init__(self) -> None:
        H = _as_matrix(self.H, "H")
        R = _as_matrix(self.R, "R")
        if R.shape != (H.shape[0], H.shape[0]):
            raise DimensionError(f"R must be {H.shape[0]}x{H.shape[0]}, got {R.shape}")
        _check_covariance(R, "R")
        if not 0.0 <= self.p_D <= 1.0:
            raise ConfigError(f"p_D must lie in [0, 1], got {self.p_D}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "p_D", float(self.p_D))

    @property
    def dim(self) -> int:
        """Measurement dimension m_z."""
        return int(self.H.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.H.shape[1])

    @property
    def is_full_state(self) -> bool:
        """True when H is the identity, i.e. z = x + v."""
        return self.H.shape[0] == self.H.shape[1] and bool(np.allclose(self.H, np.eye(self.dim)))


@dataclass(frozen=True)
class ClutterModel:
    """Poisson clutter, uniform over the sensor volume V."""

    lambda_C: float
    V: float

    def __post_init__(self) -> None:
        if self.lambda_C < 0.0:
            raise ConfigError(f"lambda_C must be non-negative, got {self.lambda_C}")
        if self.V <= 0.0:
            raise ConfigError(f"V must be positive, got {self.V}")

    @property
    def expected_count(self) -> float:
        """Mean clutter count per scan, lambda_C * V."""
        return self.lambda_C * self.V


@dataclass(frozen=True, eq=False)
class BirthModel:
    """Spatial binomial birth process over a uniform pixel grid of the sensor FOV.

    The grid lives in measurement coordinates: ``shape[i]`` equal pixels along
    axis ``i`` of the box ``[fov_lower, fov_upper]``. Each pixel spawns a target
    independently with probability ``alpha``.
    """

    fov_lower: np.ndarray
    fov_upper: np.ndarray
    shape: Tuple[int, ...]
    alpha: float
    lambda_B: Optional[float] = None
    unobserved_variance: float = 1.0

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.fov_lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.fov_upper, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        if lower.shape != upper.shape or len(shape) != lower.size:
            raise DimensionError("fov_lower, fov_upper and shape must have one entry per axis")
        if np.any(upper <= lower):
            raise ConfigError("fov_upper must exceed fov_lower on every axis")
        if any(s <= 0 for s in shape):
            raise ConfigError(f"pixel counts must be positive, got {shape}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.unobserved_variance < 0.0:
            raise ConfigError("unobserved_variance must be non-negative")
        object.__setattr__(self, "fov_lower", lower)
        object.__setattr__(self, "fov_upper", upper)
        object.__setattr__(self, "shape", shape)
        v_bar = self.V_bar
        if self.lambda_B is None:
            object.__setattr__(self, "lambda_B", float(self.alpha) / v_bar)
        elif abs(self.lambda_B * v_bar - self.alpha) > 1e-12:
            raise ConfigError(
                f"alpha={self.alpha} inconsistent with lambda_B*V_bar={self.lambda_B * v_bar}"
            )

    @classmethod
    def from_rate(cls, fov_lower: Sequence[float], fov_upper: Sequence[float],
                  shape: Sequence[int], lambda_B: float,
                  unobserved_variance: float = 1.0) -> "BirthModel":
        """Build a birth model in the Poisson parametrisation, alpha = lambda_B * V_bar."""
        lower = np.asarray(fov_lower, dtype=float)
        upper = np.asarray(fov_upper, dtype=float)
        v_bar = float(np.prod((upper - lower) / np.asarray(shape, dtype=float)))
        return cls(lower, upper, tuple(shape), lambda_B * v_bar, lambda_B, unobserved_variance)

    @property
    def M(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        """Pixel edge lengths per axis."""
        return (self.fov_upper - self.fov_lower) / np.asarray(self.shape, dtype=float)

    @property
    def V(self) -> float:
        return float(np.prod(self.fov_upper - self.fov_lower))

    @property
    def V_bar(self) -> float:
        return float(np.prod(self.widths))

    def pixel_bounds(self, pixel_index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of a pixel (row-major pixel numbering)."""
        if not 0 <= pixel_index < self.M:
            raise RangeError(f"pixel index {pixel_index} outside [0, {self.M})")
        cell = np.array(np.unravel_index(pixel_index, self.shape), dtype=float)
        lower = self.fov_lower + cell * self.widths
        return lower, lower + self.widths

    def pixel_center(self, pixel_index: int) -> np.ndarray:
        lower, upper = self.pixel_bounds(pixel_index)
        return 0.5 * (lower + upper)

    def pixel_of(self, z: np.ndarray) -> Optional[int]:
        """Index of the pixel containing measurement z, or None outside the FOV."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != self.fov_lower.shape:
            raise DimensionError(f"measurement has shape {z.shape}, FOV has {self.fov_lower.shape}")
        if np.any(z < self.fov_lower) or np.any(z >= self.fov_upper):
            return None
        cell = np.floor((z - self.fov_lower) / self.widths).astype(int)
        cell = np.minimum(cell, np.asarray(self.shape) - 1)
        return int(np.ravel_multi_index(tuple(cell), self.shape))


@dataclass(frozen=True)
class SurvivalModel:
    """Each target survives a scan independently with probability beta."""

    beta: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True, eq=False)
class ScenarioModels:
    """All model parameters of one scenario, plus the engine's birth representation."""

    motion: MotionModel
    measurement: MeasurementModel
    clutter: ClutterModel
    birth: BirthModel
    survival: SurvivalModel = field(default_factory=lambda: SurvivalModel(1.0))
    birth_pdf_mode: BirthPdfMode = "gaussian"
    birth_prior_mode: BirthPriorMode = "binomial"

    def __post_init__(self) -> None:
        if self.measurement.state_dim != self.motion.dim:
            raise DimensionError(
                f"H expects state dimension {self.measurement.state_dim}, F has {self.motion.dim}"
            )
        if self.birth.fov_lower.size != self.measurement.dim:
            raise DimensionError("birth pixel grid must span the measurement space")
        if not math.isclose(self.birth.V, self.clutter.V, rel_tol=1e-9):
            raise ConfigError(f"clutter volume {self.clutter.V} != FOV volume {self.birth.V}")
        if self.birth_pdf_mode not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown birth_pdf_mode {self.birth_pdf_mode!r}")
        if self.birth_prior_mode not in ("binomial", "poisson"):
            raise ConfigError(f"unknown birth_prior_mode {self.birth_prior_mode!r}")
        if self.birth_pdf_mode == "uniform" and not self.measurement.is_full_state:
            raise ConfigError("uniform birth pdfs require a full-state measurement (H = I)")
        if not self.measurement.is_full_state and self.birth.unobserved_variance <= 0.0:
            raise ConfigError("unobserved_variance must be positive when H is not the identity")

    def log_birth_prior(self, p: int) -> float:
        """Log prior of one specific p-birth hypothesis under the configured prior mode."""
        if self.birth_prior_mode == "poisson":
            return log_birth_prior_poisson_limit(p, self.birth)
        return log_birth_prior(p, self.birth)


def log_association_prior(n: int, m: int, k: int, meas: MeasurementModel,
                          clutter: ClutterModel) -> float:
    """Log prior of one data association assigning k of m measurements to clutter."""
    if not 0 <= k <= m:
        raise RangeError(f"clutter count k={k} outside [0, m={m}]")
    detected = m - k
    if detected > n:
        raise DimensionError(f"{detected} detections but only {n} targets")
    rate = clutter.expected_count
    return float(
        xlogy(detected, meas.p_D)
        + xlogy(n - detected, 1.0 - meas.p_D)
        - rate
        + xlogy(k, rate)
        - gammaln(k + 1)
    )


def association_prior(n: int, m: int, k: int, meas: MeasurementModel,
                      clutter: ClutterModel) -> float:
    return math.exp(log_association_prior(n, m, k, meas, clutter))


def log_birth_prior(p: int, birth: BirthModel) -> float:
    """Log of alpha^p (1 - alpha)^(M - p) for one specific p-birth hypothesis."""
    if not 0 <= p <= birth.M:
        raise RangeError(f"birth count p={p} outside [0, M={birth.M}]")
    if birth.alpha == 1.0:
        return 0.0 if p == birth.M else -math.inf
    return float(xlogy(p, birth.alpha) + (birth.M - p) * math.log1p(-birth.alpha))


def birth_prior(p: int, birth: BirthModel) -> float:
    return math.exp(log_birth_prior(p, birth))


def log_birth_prior_poisson_limit(p: int, birth: BirthModel) -> float:
    """Log of exp(-lambda_B V) (lambda_B V_bar)^p, the Poisson-limit per-hypothesis weight."""
    if p < 0:
        raise RangeError(f"birth count p={p} must be non-negative")
    lambda_B = float(birth.lambda_B or 0.0)
    return float(-lambda_B * birth.V + xlogy(p, lambda_B * birth.V_bar))


def birth_prior_poisson_limit(p: int, birth: BirthModel) -> float:
    return math.exp(log_birth_prior_poisson_limit(p, birth))


def log_survival_prior(p: int, r: int, surv: SurvivalModel) -> float:
    """Log of beta^p (1 - beta)^(r - p) for one specific survival subset."""
    if not 0 <= p <= r:
        raise RangeError(f"survivor count p={p} outside [0, r={r}]")
    return float(xlogy(p, surv.beta) + xlogy(r - p, 1.0 - surv.beta))


def survival_prior(p: int, r: int, surv: SurvivalModel) -> float:
    return math.exp(log_survival_prior(p, r, surv))


def birth_pdf(pixel_index: int, birth: BirthModel, mode: BirthPdfMode = "gaussian",
              meas: Optional[MeasurementModel] = None
              ) -> Union[GaussianBelief, UniformBoxBelief]:
    """Birth density of one pixel.

    ``uniform`` gives the exact box density 1_pixel(x) / V_bar. ``gaussian``
    moment-matches that box (mean at the pixel centre, variance width^2 / 12 per
    axis) and, when a measurement model is given, lifts it to state space through
    the pseudo-inverse of H, with ``unobserved_variance`` on the null space of H.
    """
    lower, upper = birth.pixel_bounds(pixel_index)
    if mode == "uniform":
        if meas is not None and not meas.is_full_state:
            raise ConfigError("uniform birth pdfs require a full-state measurement (H = I)")
        return UniformBoxBelief(lower, upper)
    if mode != "gaussian":
        raise ConfigError(f"unknown birth pdf mode {mode!r}")
    box = UniformBoxBelief(lower, upper)
    if meas is None or meas.is_full_state:
        return box.to_gaussian()
    lift = np.linalg.pinv(meas.H)
    null_projector = np.eye(meas.state_dim) - lift @ meas.H
    mean = lift @ box.mean
    cov = lift @ box.cov @ lift.T + birth.unobserved_variance * null_projector
    return GaussianBelief(mean, cov)
