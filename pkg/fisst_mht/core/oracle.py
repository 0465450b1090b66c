"""Slow, exact grid reference for the multi-target recursion.

Densities live on a midpoint grid over the state space. Multi-target pdfs are
kept in symmetrized product form (a tuple of component densities) and can be
materialized as full tensors on the n-fold product grid, where prediction and
update are evaluated by brute force: the transition kernel is applied along
every axis of the joint, and the posterior weights come from explicit sums over
coordinate-level associations and component permutations with the 1/n!
set-integral convention. Cardinality is capped by the tensor budget.
"""

import functools
import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import multivariate_normal

from fisst_mht.core.association import (
    BirthHypothesis,
    BirthPolicy,
    enumerate_associations,
    enumerate_birth_hypotheses,
    enumerate_survival,
)
from fisst_mht.core.belief import (
    NULL_MEASUREMENT,
    Belief,
    GaussianBelief,
    TrackLabel,
    UniformBoxBelief,
    predict,
    update,
)
from fisst_mht.core.hypothesis import HypothesisForest
from fisst_mht.core.models import ScenarioModels, birth_pdf, log_association_prior, log_survival_prior
from fisst_mht.core.sim import Scenario, generate_measurements, generate_truth, scenario_rng
from fisst_mht.exceptions import DimensionError, ExplosionGuardError, NumericalError, ResourceGuardError

logger = logging.getLogger(__name__)

DEFAULT_MAX_CELLS = 4_000_000
_NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Uniform midpoint grid on the box [lower, upper] with ``cells[i]`` cells on axis i."""

    lower: np.ndarray
    upper: np.ndarray
    cells: Tuple[int, ...]

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if lower.shape != upper.shape or len(cells) != lower.size:
            raise DimensionError("grid bounds and cell counts must have one entry per axis")
        if np.any(upper <= lower) or any(c < 1 for c in cells):
            raise DimensionError("grid must have positive extent and at least one cell per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.cells, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Cell midpoints, shape (size, dim), row-major over the axes."""
        axes = [self.lower[i] + (np.arange(c) + 0.5) * self.widths[i] for i, c in enumerate(self.cells)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class GridBelief:
    """A single-target density sampled at the grid midpoints."""

    grid: StateGrid
    density: np.ndarray

    def __post_init__(self) -> None:
        density = np.asarray(self.density, dtype=float).reshape(-1)
        if density.size != self.grid.size:
            raise DimensionError(f"density has {density.size} values, grid has {self.grid.size}")
        if np.any(density < 0.0):
            raise NumericalError("grid density must be non-negative")
        mass = float(density.sum()) * self.grid.cell_volume
        if abs(mass - 1.0) > _NORMALIZATION_TOL:
            raise NumericalError(f"grid density integrates to {mass}, expected 1")
        object.__setattr__(self, "density", density)

    @property
    def mean(self) -> np.ndarray:
        return self.grid.points.T @ self.density * self.grid.cell_volume

    @property
    def cov(self) -> np.ndarray:
        centered = self.grid.points - self.mean
        return (centered.T * self.density) @ centered * self.grid.cell_volume


def _normalized(grid: StateGrid, values: np.ndarray) -> GridBelief:
    mass = float(values.sum()) * grid.cell_volume
    if mass <= 0.0:
        raise NumericalError("density has no mass on the grid")
    return GridBelief(grid, values / mass)


def grid_from_gaussian(b: GaussianBelief, grid: StateGrid) -> GridBelief:
    values = multivariate_normal(mean=b.mean, cov=b.cov).pdf(grid.points)
    return _normalized(grid, np.atleast_1d(values))


def grid_from_box(lower: np.ndarray, upper: np.ndarray, grid: StateGrid) -> GridBelief:
    """Indicator of the box over its volume; exact when the box edges fall on cell edges."""
    inside = np.all((grid.points >= lower) & (grid.points < upper), axis=1)
    if not inside.any():
        raise NumericalError("box contains no grid cell")
    return _normalized(grid, inside.astype(float))


def grid_from_belief(b: Belief, grid: StateGrid) -> GridBelief:
    if isinstance(b, UniformBoxBelief):
        return grid_from_box(b.lower, b.upper, grid)
    return grid_from_gaussian(b, grid)


def transition_matrix(grid: StateGrid, models: ScenarioModels) -> np.ndarray:
    """K[i, j] = p(x_i | x_j) * cell volume, columns renormalized to conserve mass."""
    motion = models.motion
    if grid.dim != motion.dim:
        raise DimensionError(f"grid dimension {grid.dim} != state dimension {motion.dim}")
    targets = grid.points @ motion.F.T
    process_cov = motion.process_cov
    if float(np.linalg.eigvalsh(process_cov).min()) <= 1e-14:
        kernel = np.zeros((grid.size, grid.size))
        for j, x in enumerate(targets):
            kernel[int(np.argmin(np.sum((grid.points - x) ** 2, axis=1))), j] = 1.0
        return kernel
    density = multivariate_normal(mean=np.zeros(grid.dim), cov=process_cov)
    kernel = np.empty((grid.size, grid.size))
    for j, x in enumerate(targets):
        kernel[:, j] = np.atleast_1d(density.pdf(grid.points - x))
    return kernel / kernel.sum(axis=0, keepdims=True)


def likelihood_vector(grid: StateGrid, z: np.ndarray, models: ScenarioModels) -> np.ndarray:
    """p(z | x_i) at every grid point."""
    meas = models.measurement
    residuals = np.asarray(z, dtype=float).reshape(1, -1) - grid.points @ meas.H.T
    return np.atleast_1d(multivariate_normal(mean=np.zeros(meas.dim), cov=meas.R).pdf(residuals))


@dataclass(frozen=True, eq=False)
class SymmetricMTpdf:
    """n-target pdf sum_nu prod_i p^i(x_nu_i) held by its components.

    ``numeric_joint``, when present, is the same pdf obtained by brute-force
    integration on the n-fold product grid.
    """

    grid: StateGrid
    components: Tuple[GridBelief, ...]
    numeric_joint: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.components)

    def joint(self, max_cells: int = DEFAULT_MAX_CELLS) -> np.ndarray:
        """Materialize sum over permutations of the component product, shape (C,)*n."""
        _check_budget(self.grid, self.n, max_cells)
        if self.n == 0:
            return np.array(1.0)
        product = _outer([c.density for c in self.components])
        return sum(np.transpose(product, perm) for perm in itertools.permutations(range(self.n)))

    def evaluate(self, cell_indices: Sequence[int]) -> float:
        """Joint density at one tuple of grid cells, without materializing the tensor."""
        if len(cell_indices) != self.n:
            raise DimensionError(f"expected {self.n} cell indices, got {len(cell_indices)}")
        return math.fsum(
            math.prod(self.components[i].density[cell_indices[perm[i]]] for i in range(self.n))
            for perm in itertools.permutations(range(self.n))
        )


def _check_budget(grid: StateGrid, n: int, max_cells: int) -> None:
    if grid.size ** n > max_cells:
        raise ResourceGuardError(
            f"{n}-target tensor on {grid.size} cells needs {grid.size ** n} entries, budget {max_cells}")


def _outer(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return functools.reduce(np.multiply.outer, vectors)


def _apply_kernel(joint: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    for axis in range(joint.ndim):
        joint = np.moveaxis(np.tensordot(kernel, joint, axes=([1], [axis])), 0, axis)
    return joint


def _birth_densities(birth_hyp: BirthHypothesis, grid: StateGrid,
                     models: ScenarioModels) -> List[GridBelief]:
    if not models.measurement.is_full_state and birth_hyp.pixels:
        raise DimensionError("grid births need a full-state measurement model")
    # same pixel pdf as the engine: exact box or its moment-matched Gaussian
    return [grid_from_belief(birth_pdf(p, models.birth, models.birth_pdf_mode), grid)
            for p in birth_hyp.pixels]


def oracle_predict(mt: SymmetricMTpdf, birth_hyp: BirthHypothesis, models: ScenarioModels,
                   survivors: Optional[Sequence[int]] = None, kernel: Optional[np.ndarray] = None,
                   max_cells: int = DEFAULT_MAX_CELLS) -> SymmetricMTpdf:
    """Prediction of an n-target pdf with survival and pixel births.

    The returned components are the per-target grid predictions plus the birth
    boxes; ``numeric_joint`` is computed independently by applying the kernel to
    the full joint and symmetrizing the births in.
    """
    grid = mt.grid
    kept = tuple(mt.components[i] for i in (range(mt.n) if survivors is None else survivors))
    r = len(kept)
    births = _birth_densities(birth_hyp, grid, models)
    n = r + len(births)
    _check_budget(grid, n, max_cells)
    if kernel is None:
        kernel = transition_matrix(grid, models)

    survivors_joint = _apply_kernel(SymmetricMTpdf(grid, kept).joint(max_cells), kernel)
    if births:
        stacked = _outer([survivors_joint] + [b.density for b in births]) if r else _outer(
            [b.density for b in births])
        numeric = sum(np.transpose(stacked, perm) for perm in itertools.permutations(range(n)))
        numeric = numeric / math.factorial(r)
    else:
        numeric = survivors_joint

    predicted = tuple(GridBelief(grid, kernel @ c.density) for c in kept) + tuple(births)
    return SymmetricMTpdf(grid, predicted, np.asarray(numeric))


@dataclass(frozen=True, eq=False)
class OracleChild:
    """One pdf-level association: component i takes measurement ``assignments[i]``."""

    assignments: Tuple[int, ...]
    weight: float
    posterior: SymmetricMTpdf


def oracle_update(mt: SymmetricMTpdf, Z: np.ndarray, models: ScenarioModels,
                  max_cells: int = DEFAULT_MAX_CELLS) -> List[OracleChild]:
    """Posterior numerators of every association by explicit set integration.

    For each coordinate-level association sigma and permutation nu, the product
    p(sigma | n) (k!/V^k) prod_i p(z_sigma_i | x_i) p^nu_i(x_i) is integrated on
    the n-fold grid and credited, with weight 1/n!, to the pdf-level association
    that gives component nu_i the measurement sigma_i.
    """
    grid = mt.grid
    n = mt.n
    Z = np.zeros((0, models.measurement.dim)) if len(Z) == 0 else np.atleast_2d(Z)
    m = len(Z)
    _check_budget(grid, n, max_cells)
    likelihoods = [likelihood_vector(grid, z, models) for z in Z]
    ones = np.ones(grid.size)
    volume = grid.cell_volume ** n
    # component densities in every coordinate order, shared by all associations
    products = {
        perm: (_outer([mt.components[i].density for i in perm]) if n else np.array(1.0))
        for perm in itertools.permutations(range(n))
    }
    totals: Dict[Tuple[int, ...], float] = {}
    for sigma in enumerate_associations(n, m):
        prior = math.exp(log_association_prior(n, m, sigma.k, models.measurement, models.clutter)
                         + math.lgamma(sigma.k + 1) - sigma.k * math.log(models.clutter.V))
        if prior == 0.0:
            continue
        # missed coordinates integrate against a constant one
        factors = [ones if j == NULL_MEASUREMENT else likelihoods[j] for j in sigma.assignments]
        likelihood_tensor = _outer(factors) if n else np.array(1.0)
        for perm, product in products.items():
            integral = float(np.sum(likelihood_tensor * product)) * volume
            # credit the pdf-level association seen from the components
            tau = [NULL_MEASUREMENT] * n
            for coordinate, component in enumerate(perm):
                tau[component] = sigma.assignments[coordinate]
            key = tuple(tau)
            totals[key] = totals.get(key, 0.0) + prior * integral / math.factorial(n)

    # posteriors stay in product form; weights already hold the full set integral
    children = []
    for a in enumerate_associations(n, m):
        weight = totals.get(a.assignments, 0.0)
        if weight <= 0.0:
            continue
        posterior = tuple(
            c if j == NULL_MEASUREMENT else _normalized(grid, c.density * likelihoods[j])
            for c, j in zip(mt.components, a.assignments)
        )
        children.append(OracleChild(a.assignments, weight, SymmetricMTpdf(grid, posterior)))
    return children


def set_integral(terms: Sequence[Tuple[float, SymmetricMTpdf]],
                 max_cells: int = DEFAULT_MAX_CELLS) -> float:
    """sum_n (1/n!) integral of the weighted mixture of symmetric n-target pdfs."""
    total = 0.0
    for weight, mt in terms:
        joint = mt.numeric_joint if mt.numeric_joint is not None else mt.joint(max_cells)
        total += weight * float(np.sum(joint)) * mt.grid.cell_volume ** mt.n / math.factorial(mt.n)
    return total


@dataclass(frozen=True, eq=False)
class GridHypothesis:
    labels: Tuple[TrackLabel, ...]
    mt: SymmetricMTpdf
    weight: float

    @property
    def label_key(self) -> Tuple[TrackLabel, ...]:
        return tuple(sorted(self.labels))


@dataclass(frozen=True, eq=False)
class GridForest:
    hypotheses: Tuple[GridHypothesis, ...]
    scan_index: int = 0

    def weights_by_labels(self) -> Dict[Tuple[TrackLabel, ...], float]:
        return {h.label_key: h.weight for h in self.hypotheses}


def grid_forest_from(forest: HypothesisForest, grid: StateGrid) -> GridForest:
    """Discretize an engine forest onto a grid."""
    hypotheses = []
    for h in forest.normalized().hypotheses:
        components = tuple(grid_from_belief(t.belief, grid) for t in h.tracks)
        hypotheses.append(GridHypothesis(h.labels, SymmetricMTpdf(grid, components), h.weight))
    return GridForest(tuple(hypotheses), forest.scan_index)


def oracle_step(forest: GridForest, Z: np.ndarray, models: ScenarioModels,
                birth_policy: BirthPolicy = BirthPolicy("none"),
                kernel: Optional[np.ndarray] = None,
                max_cells: int = DEFAULT_MAX_CELLS) -> GridForest:
    """Brute-force counterpart of one unpruned FISST recursion."""
    scan_index = forest.scan_index + 1
    Z = np.zeros((0, models.measurement.dim)) if len(Z) == 0 else np.atleast_2d(Z)
    grid = forest.hypotheses[0].mt.grid
    if kernel is None:
        kernel = transition_matrix(grid, models)
    birth_hypotheses = enumerate_birth_hypotheses(models.birth, Z, birth_policy)
    merged: Dict[Tuple[TrackLabel, ...], GridHypothesis] = {}
    for parent in forest.hypotheses:
        for s in enumerate_survival(parent.mt.n):
            survival_weight = math.exp(log_survival_prior(s.p, s.r, models.survival))
            if survival_weight == 0.0:
                continue
            for b in birth_hypotheses:
                predicted = oracle_predict(parent.mt, b, models, s.survivors, kernel, max_cells)
                prior = parent.weight * survival_weight * math.exp(models.log_birth_prior(b.p))
                labels = tuple(parent.labels[i] for i in s.survivors) + tuple(
                    TrackLabel.birth(scan_index, pixel) for pixel in b.pixels)
                for child in oracle_update(predicted, Z, models, max_cells):
                    child_labels = tuple(
                        label.extend(scan_index, j) for label, j in zip(labels, child.assignments))
                    hypothesis = GridHypothesis(child_labels, child.posterior, prior * child.weight)
                    key = hypothesis.label_key
                    if key in merged:
                        hypothesis = replace(merged[key], weight=merged[key].weight + hypothesis.weight)
                    merged[key] = hypothesis
    total = math.fsum(h.weight for h in merged.values())
    if total <= 0.0:
        raise NumericalError("every oracle descendant has zero weight")
    return GridForest(tuple(replace(h, weight=h.weight / total) for h in merged.values()), scan_index)


@dataclass(frozen=True)
class UniquenessReport:
    """Smallest parameter distance between distinct tracks over a scan horizon."""

    min_distance: float
    closest_pair: Tuple[str, str]
    n_tracks: int
    scans: int

    @property
    def distinct(self) -> bool:
        return self.min_distance > 1e-9


def track_uniqueness_experiment(seed: int, scans: int, models: ScenarioModels,
                                initial_targets: Sequence[GaussianBelief],
                                inject_duplicate: bool = False,
                                max_tracks: int = 200_000) -> UniquenessReport:
    """Enumerate every track (origin, association history) and compare their beliefs.

    Measurements come from the simulator with the given seed. With
    ``inject_duplicate`` every non-empty scan gets a verbatim copy of its first
    measurement, which must produce a zero distance.
    """
    scenario = Scenario(models, scans, tuple(initial_targets), seed)
    rng = scenario_rng(scenario)
    truth = generate_truth(scenario, rng)
    scans_out = generate_measurements(truth, models, rng)
    measurement_sets = [scan.measurements for scan in scans_out]
    if inject_duplicate:
        measurement_sets = [np.vstack([Z, Z[:1]]) if len(Z) else Z for Z in measurement_sets]

    best = (math.inf, ("", ""))
    n_tracks = 0
    tracks: Dict[TrackLabel, Belief] = {TrackLabel.initial(k): b for k, b in enumerate(initial_targets)}
    for scan_index, Z in enumerate(measurement_sets, start=1):
        advanced: Dict[TrackLabel, Belief] = {}
        for label, belief in tracks.items():
            prior = predict(belief, models.motion)
            advanced[label.extend(scan_index, NULL_MEASUREMENT)] = prior
            for j, z in enumerate(Z):
                advanced[label.extend(scan_index, j)] = update(prior, z, models.measurement)[0]
        if len(advanced) > max_tracks:
            raise ExplosionGuardError(f"{len(advanced)} tracks exceed cap {max_tracks}", scan_index)
        tracks = advanced
        n_tracks = len(tracks)
        if n_tracks < 2:
            continue
        labels = list(tracks)
        params = np.stack([tracks[label].parameters() for label in labels])
        distances = squareform(pdist(params, metric="chebyshev"))
        np.fill_diagonal(distances, np.inf)
        i, j = np.unravel_index(int(np.argmin(distances)), distances.shape)
        if distances[i, j] < best[0]:
            best = (float(distances[i, j]), (str(labels[i]), str(labels[j])))
    logger.info("uniqueness: %d tracks, min distance %.3g", n_tracks, best[0])
    return UniquenessReport(best[0], best[1], n_tracks, scans)
