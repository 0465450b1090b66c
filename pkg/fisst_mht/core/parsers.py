"""Parsers for scenario documents and measurement trace files."""

import json
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Protocol

import numpy as np
import yaml

from fisst_mht.core.association import BirthPolicy
from fisst_mht.core.belief import GaussianBelief
from fisst_mht.core.hypothesis import EngineSettings
from fisst_mht.core.models import (
    BirthModel,
    ClutterModel,
    MeasurementModel,
    MotionModel,
    ScenarioModels,
    SurvivalModel,
)
from fisst_mht.core.pruning import PruningPolicy
from fisst_mht.core.sim import MeasurementScan, RunSettings, Scenario
from fisst_mht.exceptions import ConfigError, FisstError

SECTIONS = ("motion", "measurement", "clutter", "birth", "survival", "initial_targets", "run")
RUN_KEYS = (
    "horizon", "seed", "mode", "birth_policy", "max_births", "birth_mode", "birth_prior",
    "gate_probability", "max_hypotheses", "min_weight", "drop_undetected_births",
    "max_descendants", "workers", "homht_pd_factors", "top_hypotheses",
)


class ContentParser(Protocol):
    """Protocol for content parsers."""

    def parse(self, content: str) -> Any:
        """Parse the text of one document."""
        ...


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A parsed scenario document: what to simulate and how to track it."""

    scenario: Scenario
    settings: RunSettings


def _section(document: Mapping[str, Any], name: str, required: bool = True) -> Dict[str, Any]:
    value = document.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing section '{name}'")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return value


def _require(section: Mapping[str, Any], key: str, name: str) -> Any:
    if key not in section:
        raise ConfigError(f"section '{name}' is missing '{key}'")
    return section[key]


class ScenarioParser:
    """Parser for YAML scenario documents.

    Matrices are row-major nested lists. The clutter volume defaults to the
    birth field of view, and the birth model accepts either ``alpha`` or
    ``lambda_B``.
    """

    def parse(self, content: str) -> ScenarioConfig:
        """
        Parse a scenario document.

        Args:
            content: YAML text with the motion, measurement, clutter, birth,
                survival, initial_targets and run sections

        Returns:
            The scenario and its run settings
        """
        try:
            document = yaml.safe_load(content)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError("scenario document must be a mapping")
        unknown = sorted(set(document) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")
        try:
            return self._build(document)
        except FisstError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def _build(self, document: Mapping[str, Any]) -> ScenarioConfig:
        run = _section(document, "run", required=False)
        unknown = sorted(set(run) - set(RUN_KEYS))
        if unknown:
            raise ConfigError(f"unknown run keys: {', '.join(unknown)}")

        motion = _section(document, "motion")
        measurement = _section(document, "measurement")
        birth = _section(document, "birth")
        clutter = _section(document, "clutter")
        survival = _section(document, "survival", required=False)

        birth_model = self._birth(birth)
        models = ScenarioModels(
            motion=MotionModel(_require(motion, "F", "motion"), _require(motion, "G", "motion"),
                               _require(motion, "Q", "motion")),
            measurement=MeasurementModel(_require(measurement, "H", "measurement"),
                                         _require(measurement, "R", "measurement"),
                                         float(_require(measurement, "p_D", "measurement"))),
            clutter=ClutterModel(float(_require(clutter, "lambda_C", "clutter")),
                                 float(clutter.get("V", birth_model.V))),
            birth=birth_model,
            survival=SurvivalModel(float(survival.get("beta", 1.0))),
            birth_pdf_mode=run.get("birth_mode", "gaussian"),
            birth_prior_mode=run.get("birth_prior", "binomial"),
        )

        targets = document.get("initial_targets") or []
        if not isinstance(targets, list):
            raise ConfigError("initial_targets must be a list of {mean, cov} entries")
        initial = tuple(
            GaussianBelief(np.asarray(_require(t, "mean", "initial_targets"), dtype=float),
                           np.asarray(_require(t, "cov", "initial_targets"), dtype=float))
            for t in targets
        )
        scenario = Scenario(models, int(run.get("horizon", 10)), initial, int(run.get("seed", 0)))

        settings = RunSettings(
            mode=run.get("mode", "fisst"),
            pruning=PruningPolicy(
                max_hypotheses=int(run.get("max_hypotheses", 100)),
                min_weight=float(run.get("min_weight", 0.0)),
                drop_undetected_births=bool(run.get("drop_undetected_births", False)),
            ),
            engine=EngineSettings(
                birth_policy=BirthPolicy(run.get("birth_policy", "measurement_gated"),
                                         int(run.get("max_births", 1))),
                gate_probability=run.get("gate_probability"),
                max_descendants=int(run.get("max_descendants", 200_000)),
                workers=int(run.get("workers", 1)),
                homht_pd_factors=bool(run.get("homht_pd_factors", False)),
            ),
            top_hypotheses=int(run.get("top_hypotheses", 10)),
        )
        return ScenarioConfig(scenario, settings)

    @staticmethod
    def _birth(birth: Mapping[str, Any]) -> BirthModel:
        lower = _require(birth, "fov_lower", "birth")
        upper = _require(birth, "fov_upper", "birth")
        shape = tuple(_require(birth, "shape", "birth"))
        unobserved = float(birth.get("unobserved_variance", 1.0))
        if "alpha" in birth:
            rate: Optional[float] = birth.get("lambda_B")
            return BirthModel(lower, upper, shape, float(birth["alpha"]),
                              None if rate is None else float(rate), unobserved)
        if "lambda_B" in birth:
            return BirthModel.from_rate(lower, upper, shape, float(birth["lambda_B"]), unobserved)
        raise ConfigError("section 'birth' needs 'alpha' or 'lambda_B'")


class MeasurementTraceParser:
    """Parser for line-delimited JSON measurement traces, one scan per line."""

    def __init__(self, dim: Optional[int] = None):
        self.dim = dim

    def parse(self, content: str) -> List[MeasurementScan]:
        """
        Parse a measurement trace.

        Each non-blank line is ``{"scan": t, "measurements": [[...], ...]}``.
        Origin tags, if present, are ignored.

        Args:
            content: The trace text

        Returns:
            The measurement scans in file order
        """
        scans = []
        for line_number, line in enumerate(content.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                values = np.asarray(row["measurements"], dtype=float)
                scan_index = int(row["scan"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"line {line_number}: malformed measurement record ({exc})") from exc
            if values.size == 0:
                values = np.zeros((0, self.dim or 0))
            elif values.ndim != 2 or (self.dim is not None and values.shape[1] != self.dim):
                raise ConfigError(f"line {line_number}: measurements must be a list of {self.dim}-vectors")
            scans.append(MeasurementScan(scan_index, values))
        return scans


def get_parser(parser_type: str = "scenario", dim: Optional[int] = None) -> ContentParser:
    """
    Factory function to get the appropriate parser based on type.

    Args:
        parser_type: "scenario" or "measurements"
        dim: Measurement dimension, used by the measurement parser

    Returns:
        A ContentParser instance
    """
    parsers: Dict[str, ContentParser] = {
        "scenario": ScenarioParser(),
        "measurements": MeasurementTraceParser(dim),
    }
    if parser_type not in parsers:
        raise ConfigError(f"unknown parser type {parser_type!r}")
    return parsers[parser_type]
