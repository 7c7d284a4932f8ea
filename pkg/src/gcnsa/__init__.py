"""Node classification with a learned re-connected graph and self-attention fusion."""

from .config import PRESETS, TrainConfig, load_config, preset
from .errors import ConfigError, DataError, GcnSaError, NumericalError, ShapeError
from .graph import Graph, SparseAdjacency, homophily_ratio, load_graph, make_graph, make_splits
from .model import VARIANTS, GcnSaParams, PreparedGraph, VariantConfig, forward, get_variant
from .structure import SparsifierConfig, StructureHeads, build_reconnected
from .tensor import Rng, Tensor
from .training import run_protocol, train_one_run

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "TrainConfig", "load_config", "preset",
    "ConfigError", "DataError", "GcnSaError", "NumericalError", "ShapeError",
    "Graph", "SparseAdjacency", "homophily_ratio", "load_graph", "make_graph", "make_splits",
    "VARIANTS", "GcnSaParams", "PreparedGraph", "VariantConfig", "forward", "get_variant",
    "SparsifierConfig", "StructureHeads", "build_reconnected",
    "Rng", "Tensor", "run_protocol", "train_one_run",
]
