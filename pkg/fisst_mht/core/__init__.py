"""Core functionality for FISST MHT."""

from fisst_mht.core.hypothesis import (
    EngineSettings,
    Hypothesis,
    HypothesisForest,
    fisst_step,
    homht_step,
    initial_forest,
)
from fisst_mht.core.models import ScenarioModels
from fisst_mht.core.parsers import ContentParser, get_parser
from fisst_mht.core.pruning import PruningPolicy, prune

__all__ = [
    'EngineSettings',
    'Hypothesis',
    'HypothesisForest',
    'fisst_step',
    'homht_step',
    'initial_forest',
    'ScenarioModels',
    'ContentParser',
    'get_parser',
    'PruningPolicy',
    'prune',
]
