"""Sample, general batch and streaming normalization with Lp statistics."""

from .errors import (
    ConfigError,
    ContractError,
    DegeneratePartitionError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    StateError,
    UninitializedStatsError,
    UnseenTimestepError,
)
from .lpstats import LpConfig, NormStats, compute_stats, stats_backward
from .norm import (
    BatchNorm,
    BiasGain,
    IdentityNorm,
    NormConfig,
    SampleNorm,
    StreamHyper,
    StreamNorm,
    make_norm,
    norm_op,
)
from .partition import PartitionScheme, groups_of, parse_scheme, preset
from .tensor import Rng, reduce_over, rng_normal, tensor_new

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DegeneratePartitionError",
    "FormatError",
    "NumericalError",
    "ParameterError",
    "ShapeError",
    "StateError",
    "UninitializedStatsError",
    "UnseenTimestepError",
    "LpConfig",
    "NormStats",
    "compute_stats",
    "stats_backward",
    "BatchNorm",
    "BiasGain",
    "IdentityNorm",
    "NormConfig",
    "SampleNorm",
    "StreamHyper",
    "StreamNorm",
    "make_norm",
    "norm_op",
    "PartitionScheme",
    "groups_of",
    "parse_scheme",
    "preset",
    "Rng",
    "reduce_over",
    "rng_normal",
    "tensor_new",
]
