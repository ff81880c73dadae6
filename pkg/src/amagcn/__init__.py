"""Phenotype-weighted population graphs and multi-layer aggregation GCNs."""

from .config import RunConfig
from .dataio import SynthSpec, generate_synthetic
from .errors import AmaGcnError, ConfigError, DataError, NumericError
from .model import AmaGcnConfig
from .pswe import MeasureSpec, PhenotypeTable, build_adjacency, score_measures
from .spectral import PopulationGraph
from .trainer import MetricsReport, run_cross_validation

__version__ = "0.1.0"

__all__ = [
    "AmaGcnConfig",
    "AmaGcnError",
    "ConfigError",
    "DataError",
    "MeasureSpec",
    "MetricsReport",
    "NumericError",
    "PhenotypeTable",
    "PopulationGraph",
    "RunConfig",
    "SynthSpec",
    "build_adjacency",
    "generate_synthetic",
    "run_cross_validation",
    "score_measures",
]
